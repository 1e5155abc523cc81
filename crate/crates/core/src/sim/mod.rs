//! Deterministic execution of message-passing algorithms under crash
//! failures.
//!
//! Processes are scheduled round-robin over the non-crashed members. Which
//! pending messages an actor receives is decided by the adversary named in
//! the [`Scenario`]; the seed only drives the adversary's choices, so a run
//! is a pure function of `(algorithm, scenario)`.

mod executor;
mod paste;
mod replay;
mod restrict;
mod scenario_file;

pub use paste::paste_runs;
pub use replay::{replay, state_sequences};
pub use restrict::{embed_restricted_run, restrict_algorithm, Restricted};
pub use scenario_file::{parse_scenario, ScenarioFileError};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::IteratorRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::{
    CrashPlan, FdOutput, Message, MessageId, ProcessId, SystemParams, Time, Trace, TraceStatus,
    Value,
};
use executor::{Executor, Policy, RoundOutcome};

pub const DEFAULT_FAIRNESS_BOUND: u32 = 64;
pub const DEFAULT_STEP_BUDGET: u64 = 200_000;

/// A message the sending function wants to emit.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Outgoing {
    pub to: ProcessId,
    pub payload: crate::model::Payload,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("{0}")]
pub struct AlgorithmError(pub String);

/// A deterministic per-process state machine.
///
/// `step` combines the transition relation and the sending function: both
/// read the current state, the delivered messages and the detector output.
pub trait Algorithm: Sync {
    type State: Clone + Eq + fmt::Debug + Send + Sync;

    fn name(&self) -> String;

    fn init(&self, pid: ProcessId, params: &SystemParams, input: Value) -> Self::State;

    fn step(
        &self,
        state: &Self::State,
        delivered: &[Message],
        fd: Option<&FdOutput>,
    ) -> Result<(Self::State, Vec<Outgoing>), AlgorithmError>;

    fn decision(&self, state: &Self::State) -> Option<Value>;

    fn transition(
        &self,
        state: &Self::State,
        delivered: &[Message],
        fd: Option<&FdOutput>,
    ) -> Result<Self::State, AlgorithmError> {
        self.step(state, delivered, fd).map(|(s, _)| s)
    }

    fn sending(
        &self,
        state: &Self::State,
        delivered: &[Message],
        fd: Option<&FdOutput>,
    ) -> Result<Vec<Outgoing>, AlgorithmError> {
        self.step(state, delivered, fd).map(|(_, out)| out)
    }
}

impl<A: Algorithm + ?Sized> Algorithm for &A {
    type State = A::State;

    fn name(&self) -> String {
        (**self).name()
    }

    fn init(&self, pid: ProcessId, params: &SystemParams, input: Value) -> Self::State {
        (**self).init(pid, params, input)
    }

    fn step(
        &self,
        state: &Self::State,
        delivered: &[Message],
        fd: Option<&FdOutput>,
    ) -> Result<(Self::State, Vec<Outgoing>), AlgorithmError> {
        (**self).step(state, delivered, fd)
    }

    fn decision(&self, state: &Self::State) -> Option<Value> {
        (**self).decision(state)
    }
}

/// When a [`AdversaryKind::PartitionDelay`] adversary lets inter-block
/// messages through.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Release {
    AfterAllDecided,
    AtStep(Time),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AdversaryKind {
    /// Seeded delivery jitter bounded by the fairness bound.
    Fair,
    /// Like `Fair`, and additionally crashes as many further processes
    /// initially as the failure budget `f` still allows, chosen by seed.
    InitialCrash,
    /// Holds every message between distinct blocks until the release point.
    /// Processes outside all blocks communicate freely.
    PartitionDelay {
        blocks: Vec<BTreeSet<ProcessId>>,
        release: Release,
    },
    /// Holds every message from outside `group` to members of `group` until
    /// each member has decided or crashed.
    Isolate { group: BTreeSet<ProcessId> },
}

impl fmt::Display for AdversaryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AdversaryKind::Fair => write!(f, "fair"),
            AdversaryKind::InitialCrash => write!(f, "initial-crash"),
            AdversaryKind::PartitionDelay { .. } => write!(f, "partition-delay"),
            AdversaryKind::Isolate { .. } => write!(f, "isolate"),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("scenario has {planned} failures but f = {f}")]
    TooManyFailures { planned: usize, f: u32 },
    #[error("algorithm error at time {time} in {pid}: {source}")]
    Algorithm {
        time: Time,
        pid: ProcessId,
        source: AlgorithmError,
    },
    #[error("schedule error at time {time}: {reason}")]
    Schedule { time: Time, reason: String },
    #[error("cannot restrict to an empty process set")]
    EmptyRestriction,
    #[error("paste: {0}")]
    Paste(String),
}

/// Everything that determines a run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scenario {
    pub params: SystemParams,
    /// Processes present in the system; `None` means all of `1..=n`.
    pub members: Option<BTreeSet<ProcessId>>,
    pub inputs: BTreeMap<ProcessId, Value>,
    pub adversary: AdversaryKind,
    pub crash_plan: CrashPlan,
    pub seed: u64,
    pub fairness_bound: u32,
    pub step_budget: u64,
}

impl Scenario {
    /// Fair adversary, no crashes, seed 0, and distinct inputs `x_p = p`.
    pub fn new(params: SystemParams) -> Self {
        Self {
            params,
            members: None,
            inputs: params.processes().map(|p| (p, Value(p.0 as i64))).collect(),
            adversary: AdversaryKind::Fair,
            crash_plan: CrashPlan::none(),
            seed: 0,
            fairness_bound: DEFAULT_FAIRNESS_BOUND,
            step_budget: DEFAULT_STEP_BUDGET,
        }
    }

    pub fn with_inputs(mut self, inputs: BTreeMap<ProcessId, Value>) -> Self {
        self.inputs = inputs;
        self
    }

    pub fn with_adversary(mut self, adversary: AdversaryKind) -> Self {
        self.adversary = adversary;
        self
    }

    pub fn with_crash_plan(mut self, plan: CrashPlan) -> Self {
        self.crash_plan = plan;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_members(mut self, members: BTreeSet<ProcessId>) -> Self {
        self.members = Some(members);
        self
    }

    pub fn with_fairness_bound(mut self, bound: u32) -> Self {
        self.fairness_bound = bound;
        self
    }

    pub fn with_step_budget(mut self, budget: u64) -> Self {
        self.step_budget = budget;
        self
    }

    pub fn member_set(&self) -> BTreeSet<ProcessId> {
        self.members.clone().unwrap_or_else(|| self.params.all())
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let all = self.params.all();
        let members = self.member_set();
        if members.is_empty() || !members.is_subset(&all) {
            return Err(SimError::InvalidScenario(
                "members must be a nonempty subset of 1..=n".into(),
            ));
        }
        if let Some(p) = members.iter().find(|p| !self.inputs.contains_key(p)) {
            return Err(SimError::InvalidScenario(format!("no input for {p}")));
        }
        if self.fairness_bound == 0 {
            return Err(SimError::InvalidScenario(
                "fairness bound must be positive".into(),
            ));
        }
        let faulty = self.crash_plan.faulty();
        if let Some(p) = faulty.iter().find(|p| !members.contains(p)) {
            return Err(SimError::InvalidScenario(format!(
                "crash plan names non-member {p}"
            )));
        }
        let mut seen = BTreeSet::new();
        for c in &self.crash_plan.mid_run {
            if c.after_step == 0 {
                return Err(SimError::InvalidScenario(format!(
                    "{} crashes after 0 steps; list it as initially dead",
                    c.pid
                )));
            }
            if self.crash_plan.initially_dead.contains(&c.pid) || !seen.insert(c.pid) {
                return Err(SimError::InvalidScenario(format!(
                    "{} crashes twice",
                    c.pid
                )));
            }
        }
        let planned = faulty.len();
        if planned > self.params.f() as usize {
            return Err(SimError::TooManyFailures {
                planned,
                f: self.params.f(),
            });
        }
        if members.len() == planned {
            return Err(SimError::InvalidScenario("every member is faulty".into()));
        }
        match &self.adversary {
            AdversaryKind::PartitionDelay { blocks, .. } => {
                let mut covered = BTreeSet::new();
                for b in blocks {
                    if b.is_empty() || !b.is_subset(&all) {
                        return Err(SimError::InvalidScenario(
                            "partition blocks must be nonempty subsets of 1..=n".into(),
                        ));
                    }
                    if !covered.is_disjoint(b) {
                        return Err(SimError::InvalidScenario("partition blocks overlap".into()));
                    }
                    covered.extend(b.iter().copied());
                }
            }
            AdversaryKind::Isolate { group } => {
                if group.is_empty() || !group.is_subset(&members) {
                    return Err(SimError::InvalidScenario(
                        "isolated group must be a nonempty set of members".into(),
                    ));
                }
            }
            AdversaryKind::Fair | AdversaryKind::InitialCrash => {}
        }
        Ok(())
    }
}

/// Seeded per-message delivery holds plus the adversary's release rule.
struct Adversary {
    kind: AdversaryKind,
    rng: ChaCha8Rng,
    max_hold: u32,
    block_of: BTreeMap<ProcessId, usize>,
}

impl Adversary {
    fn new(scenario: &Scenario, rng: ChaCha8Rng) -> Self {
        let n = scenario.params.n();
        let block_of = match &scenario.adversary {
            AdversaryKind::PartitionDelay { blocks, .. } => blocks
                .iter()
                .enumerate()
                .flat_map(|(i, b)| b.iter().map(move |&p| (p, i)))
                .collect(),
            _ => BTreeMap::new(),
        };
        Self {
            kind: scenario.adversary.clone(),
            rng,
            max_hold: (scenario.fairness_bound - 1).min(n),
            block_of,
        }
    }

    fn draw_hold(&mut self) -> u32 {
        self.rng.random_range(0..=self.max_hold)
    }

    fn released<A: Algorithm>(&self, exec: &Executor<'_, A>, msg: &Message) -> bool {
        match &self.kind {
            AdversaryKind::Fair | AdversaryKind::InitialCrash => true,
            AdversaryKind::PartitionDelay { release, .. } => {
                let same_block = match (
                    self.block_of.get(&msg.sender),
                    self.block_of.get(&msg.receiver),
                ) {
                    (Some(a), Some(b)) => a == b,
                    _ => true,
                };
                same_block
                    || match release {
                        Release::AfterAllDecided => exec.all_correct_decided(),
                        Release::AtStep(t) => exec.time() >= *t,
                    }
            }
            AdversaryKind::Isolate { group } => {
                !group.contains(&msg.receiver)
                    || group.contains(&msg.sender)
                    || group
                        .iter()
                        .all(|&p| exec.is_crashed(p) || exec.has_decided(p))
            }
        }
    }
}

impl<A: Algorithm> Policy<A> for Adversary {
    fn choose(
        &mut self,
        exec: &mut Executor<'_, A>,
        actor: ProcessId,
    ) -> (Vec<MessageId>, Option<FdOutput>) {
        let released: Vec<bool> = exec
            .pending_for(actor)
            .iter()
            .map(|p| self.released(exec, &p.msg))
            .collect();
        (exec.take_releasable(actor, &released), None)
    }

    fn hold(&mut self, _msg: &Message) -> u32 {
        self.draw_hold()
    }
}

/// Runs `algorithm` on `scenario` until quiescence or until the step budget
/// is exhausted, in which case the returned trace is marked truncated.
pub fn run_simulation<A: Algorithm>(algorithm: &A, scenario: &Scenario) -> Result<Trace, SimError> {
    scenario.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let members = scenario.member_set();
    let mut plan = scenario.crash_plan.clone();
    if scenario.adversary == AdversaryKind::InitialCrash {
        let spare = scenario.params.f() as usize - plan.failure_count();
        let candidates: Vec<ProcessId> = members
            .iter()
            .copied()
            .filter(|p| !plan.faulty().contains(p))
            .collect();
        let extra = spare.min(candidates.len().saturating_sub(1));
        plan.initially_dead
            .extend(candidates.into_iter().choose_multiple(&mut rng, extra));
    }
    let inputs = members.iter().map(|p| (*p, scenario.inputs[p])).collect();
    let mut exec = Executor::new(algorithm, scenario.params, members, inputs, plan);
    let mut adversary = Adversary::new(scenario, rng);

    let status = loop {
        match exec.round(scenario.step_budget, &mut adversary)? {
            RoundOutcome::Quiescent { from } => {
                break TraceStatus::Complete {
                    quiescent_from: from,
                }
            }
            RoundOutcome::BudgetExhausted => break TraceStatus::Truncated,
            RoundOutcome::Progress => {}
        }
    };
    Ok(exec.into_trace(scenario.seed, status))
}

#[cfg(test)]
mod tests;
