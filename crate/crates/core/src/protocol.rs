//! The two-stage k-set agreement protocol for systems where up to `f`
//! processes may be initially dead.
//!
//! Stage 1: every process broadcasts its id and waits for `L - 1` stage-1
//! messages from other processes, with `L = n - f`. The senders form its
//! heard-list, i.e. its in-neighbours in the knowledge graph.
//!
//! Stage 2: every process broadcasts its input together with its heard-list
//! and waits for the stage-2 message of every ancestor it learns of. It then
//! knows the full ancestor subgraph of itself, picks the reachable source
//! component with the smallest id and decides the input of that component's
//! smallest member.

use std::collections::{BTreeMap, BTreeSet};

use crate::graph::{reachable_sources, Digraph};
use crate::model::{FdOutput, Message, Payload, ProcessId, SystemParams, Value};
use crate::sim::{Algorithm, AlgorithmError, Outgoing};

/// How far a process extends its stage-2 wait set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WaitRule {
    /// Wait for every ancestor: heard-lists carried by awaited stage-2
    /// messages extend the wait set transitively.
    #[default]
    Closure,
    /// Wait only for the `L - 1` processes heard in stage 1.
    Strict,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TwoStage {
    pub rule: WaitRule,
}

impl TwoStage {
    pub const NAME: &'static str = "two-stage";
    pub const STRICT_NAME: &'static str = "two-stage-strict";

    pub fn strict() -> Self {
        Self {
            rule: WaitRule::Strict,
        }
    }

    /// Looks an algorithm up by the name it writes into traces.
    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            Self::NAME => Some(Self::default()),
            Self::STRICT_NAME => Some(Self::strict()),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Phase {
    Stage1,
    Stage2,
    Decided,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProtocolState {
    pub pid: ProcessId,
    pub params: SystemParams,
    pub input: Value,
    pub phase: Phase,
    /// Whether the stage-1 broadcast went out.
    pub started: bool,
    pub stage1_heard: BTreeSet<ProcessId>,
    pub stage2_info: BTreeMap<ProcessId, (Value, BTreeSet<ProcessId>)>,
    pub want: BTreeSet<ProcessId>,
    pub decision: Option<Value>,
}

impl ProtocolState {
    fn quota(&self) -> usize {
        self.params.quota() as usize - 1
    }
}

pub fn protocol_init(pid: ProcessId, params: SystemParams, input: Value) -> ProtocolState {
    ProtocolState {
        pid,
        params,
        input,
        phase: Phase::Stage1,
        started: false,
        stage1_heard: BTreeSet::new(),
        stage2_info: BTreeMap::new(),
        want: BTreeSet::new(),
        decision: None,
    }
}

fn broadcast(state: &ProtocolState, payload: Payload) -> impl Iterator<Item = Outgoing> + '_ {
    state
        .params
        .processes()
        .filter(move |&q| q != state.pid)
        .map(move |to| Outgoing {
            to,
            payload: payload.clone(),
        })
}

fn absorb(state: &mut ProtocolState, msg: &Message) -> Result<(), AlgorithmError> {
    if msg.receiver != state.pid {
        return Err(AlgorithmError(format!(
            "message {} for {} delivered to {}",
            msg.id, msg.receiver, state.pid
        )));
    }
    match &msg.payload {
        Payload::Stage1 => {
            if state.phase == Phase::Stage1 && state.stage1_heard.len() < state.quota() {
                state.stage1_heard.insert(msg.sender);
            }
        }
        Payload::Stage2 { proposal, heard } => {
            let n = state.params.n();
            if heard.len() != state.quota()
                || heard.contains(&msg.sender)
                || heard.iter().any(|q| q.0 == 0 || q.0 > n)
            {
                return Err(AlgorithmError(format!(
                    "malformed stage-2 heard-list from {}",
                    msg.sender
                )));
            }
            match state.stage2_info.get(&msg.sender) {
                Some((v, h)) if v == proposal && h == heard => {}
                Some(_) => {
                    return Err(AlgorithmError(format!(
                        "conflicting stage-2 messages from {}",
                        msg.sender
                    )));
                }
                None => {
                    state
                        .stage2_info
                        .insert(msg.sender, (*proposal, heard.clone()));
                }
            }
        }
        Payload::Opaque(_) => {
            return Err(AlgorithmError(format!(
                "opaque payload from {}",
                msg.sender
            )));
        }
    }
    Ok(())
}

/// Grows `want` to the set of ancestors of the process that can be derived
/// from the stage-2 messages held so far.
fn extend_closure(state: &mut ProtocolState) {
    let mut frontier: Vec<ProcessId> = state.want.iter().copied().collect();
    while let Some(q) = frontier.pop() {
        if let Some((_, heard)) = state.stage2_info.get(&q) {
            for &u in heard {
                if u != state.pid && state.want.insert(u) {
                    frontier.push(u);
                }
            }
        }
    }
}

/// One step: absorb the delivered messages, then advance the phase.
pub fn protocol_step(
    state: &ProtocolState,
    delivered: &[Message],
    rule: WaitRule,
) -> Result<(ProtocolState, Vec<Outgoing>), AlgorithmError> {
    let mut next = state.clone();
    if next.phase == Phase::Decided {
        return Ok((next, Vec::new()));
    }
    for msg in delivered {
        absorb(&mut next, msg)?;
    }
    let mut out = Vec::new();
    if !next.started {
        next.started = true;
        out.extend(broadcast(&next, Payload::Stage1));
    }
    match next.phase {
        Phase::Stage1 => {
            if next.stage1_heard.len() == next.quota() {
                next.phase = Phase::Stage2;
                next.want = next.stage1_heard.clone();
                let payload = Payload::Stage2 {
                    proposal: next.input,
                    heard: next.stage1_heard.clone(),
                };
                out.extend(broadcast(&next, payload));
            }
        }
        Phase::Stage2 => {
            if rule == WaitRule::Closure {
                extend_closure(&mut next);
            }
            if next.want.iter().all(|q| next.stage2_info.contains_key(q)) {
                let y = decide(&next)?;
                next.decision = Some(y);
                next.phase = Phase::Decided;
            }
        }
        Phase::Decided => unreachable!("handled above"),
    }
    Ok((next, out))
}

/// The decision rule, applied once stage-2 messages from all of `want` are
/// held.
///
/// Builds the knowledge subgraph on `want ∪ {pid}` (edge `u → w` iff `u` is
/// in `w`'s heard-list), takes the source components `pid` is reachable
/// from, selects the one holding the smallest id and returns the input of
/// its smallest member.
pub fn decide(state: &ProtocolState) -> Result<Value, AlgorithmError> {
    let mut vertices = state.want.clone();
    vertices.insert(state.pid);
    let heard_of = |w: ProcessId| -> Option<&BTreeSet<ProcessId>> {
        if w == state.pid {
            Some(&state.stage1_heard)
        } else {
            state.stage2_info.get(&w).map(|(_, h)| h)
        }
    };
    let mut edges = Vec::new();
    for &w in &vertices {
        let heard =
            heard_of(w).ok_or_else(|| AlgorithmError(format!("no stage-2 message from {w}")))?;
        edges.extend(
            heard
                .iter()
                .filter(|u| vertices.contains(u))
                .map(|&u| (u, w)),
        );
    }
    let g = Digraph::new(vertices.iter().copied(), edges)
        .map_err(|e| AlgorithmError(format!("knowledge graph: {e}")))?;
    let sources = reachable_sources(&g, state.pid)
        .map_err(|e| AlgorithmError(format!("knowledge graph: {e}")))?;
    let leader = sources
        .iter()
        .filter_map(|c| c.first().copied())
        .min()
        .ok_or_else(|| AlgorithmError("no source component reaches the process".into()))?;
    if leader == state.pid {
        Ok(state.input)
    } else {
        Ok(state.stage2_info[&leader].0)
    }
}

impl Algorithm for TwoStage {
    type State = ProtocolState;

    fn name(&self) -> String {
        match self.rule {
            WaitRule::Closure => Self::NAME.into(),
            WaitRule::Strict => Self::STRICT_NAME.into(),
        }
    }

    fn init(&self, pid: ProcessId, params: &SystemParams, input: Value) -> ProtocolState {
        protocol_init(pid, *params, input)
    }

    fn step(
        &self,
        state: &ProtocolState,
        delivered: &[Message],
        _fd: Option<&FdOutput>,
    ) -> Result<(ProtocolState, Vec<Outgoing>), AlgorithmError> {
        protocol_step(state, delivered, self.rule)
    }

    fn decision(&self, state: &ProtocolState) -> Option<Value> {
        state.decision
    }
}
