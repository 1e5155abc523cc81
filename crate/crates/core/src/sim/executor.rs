use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::model::{
    CrashPlan, FdOutput, Message, MessageId, ProcessId, StepRecord, SystemParams, Time, Trace,
    TraceStatus, Value,
};

use super::{Algorithm, SimError};

/// Identity of a message that survives re-execution: the same process step
/// sends the same message in every run where the sender's states agree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub(crate) struct MessageKey {
    pub sender: ProcessId,
    pub sender_step: u32,
    pub receiver: ProcessId,
    /// Position among the messages from that step to that receiver.
    pub seq: u32,
}

/// Recomputes the [`MessageKey`] of every message recorded in `trace`.
pub(crate) fn message_keys(trace: &Trace) -> HashMap<MessageId, MessageKey> {
    let mut local: BTreeMap<ProcessId, u32> = BTreeMap::new();
    let mut keys = HashMap::new();
    for step in &trace.steps {
        let count = local.entry(step.actor).or_insert(0);
        *count += 1;
        let mut seq: BTreeMap<ProcessId, u32> = BTreeMap::new();
        for m in &step.sent {
            let s = seq.entry(m.receiver).or_insert(0);
            keys.insert(
                m.id,
                MessageKey {
                    sender: step.actor,
                    sender_step: *count,
                    receiver: m.receiver,
                    seq: *s,
                },
            );
            *s += 1;
        }
    }
    keys
}

#[derive(Debug, Clone)]
pub(crate) struct Pending {
    pub msg: Message,
    pub key: MessageKey,
    /// Receiver steps still to wait once the message is released.
    pub hold: u32,
}

pub(crate) enum RoundOutcome {
    Progress,
    Quiescent { from: Time },
    BudgetExhausted,
}

/// Chooses, for each scheduled step, what the actor receives.
pub(crate) trait Policy<A: Algorithm> {
    fn choose(
        &mut self,
        exec: &mut Executor<'_, A>,
        actor: ProcessId,
    ) -> (Vec<MessageId>, Option<FdOutput>);

    fn hold(&mut self, _msg: &Message) -> u32 {
        0
    }
}

/// Delivers every pending message immediately.
pub(crate) struct DeliverAll;

impl<A: Algorithm> Policy<A> for DeliverAll {
    fn choose(
        &mut self,
        exec: &mut Executor<'_, A>,
        actor: ProcessId,
    ) -> (Vec<MessageId>, Option<FdOutput>) {
        (
            exec.pending_for(actor).iter().map(|p| p.msg.id).collect(),
            None,
        )
    }
}

pub(crate) struct StepSummary {
    pub silent: bool,
}

/// Global configuration of a run under construction: local states, message
/// buffers, crash bookkeeping and the step log.
pub(crate) struct Executor<'a, A: Algorithm> {
    alg: &'a A,
    params: SystemParams,
    members: BTreeSet<ProcessId>,
    inputs: BTreeMap<ProcessId, Value>,
    plan: CrashPlan,
    states: BTreeMap<ProcessId, A::State>,
    pending: BTreeMap<ProcessId, Vec<Pending>>,
    local_steps: BTreeMap<ProcessId, u32>,
    crashed: BTreeSet<ProcessId>,
    steps: Vec<StepRecord>,
    next_id: u64,
}

impl<'a, A: Algorithm> Executor<'a, A> {
    pub fn new(
        alg: &'a A,
        params: SystemParams,
        members: BTreeSet<ProcessId>,
        inputs: BTreeMap<ProcessId, Value>,
        plan: CrashPlan,
    ) -> Self {
        let states = members
            .iter()
            .map(|&p| (p, alg.init(p, &params, inputs[&p])))
            .collect();
        let crashed = plan
            .initially_dead
            .intersection(&members)
            .copied()
            .collect();
        Self {
            alg,
            params,
            pending: members.iter().map(|&p| (p, Vec::new())).collect(),
            local_steps: members.iter().map(|&p| (p, 0)).collect(),
            members,
            inputs,
            plan,
            states,
            crashed,
            steps: Vec::new(),
            next_id: 1,
        }
    }

    pub fn time(&self) -> Time {
        self.steps.len() as Time + 1
    }

    pub fn live(&self) -> Vec<ProcessId> {
        self.members
            .iter()
            .copied()
            .filter(|p| !self.crashed.contains(p))
            .collect()
    }

    pub fn is_crashed(&self, p: ProcessId) -> bool {
        self.crashed.contains(&p)
    }

    pub fn has_decided(&self, p: ProcessId) -> bool {
        self.states
            .get(&p)
            .and_then(|s| self.alg.decision(s))
            .is_some()
    }

    fn correct(&self) -> impl Iterator<Item = ProcessId> + '_ {
        let faulty = self.plan.faulty();
        self.members
            .iter()
            .copied()
            .filter(move |p| !faulty.contains(p))
    }

    pub fn all_correct_decided(&self) -> bool {
        self.correct().all(|p| self.has_decided(p))
    }

    pub fn pending_for(&self, p: ProcessId) -> &[Pending] {
        self.pending.get(&p).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Of the released messages for `actor`, returns those whose hold has
    /// run out and counts down the others.
    pub fn take_releasable(&mut self, actor: ProcessId, released: &[bool]) -> Vec<MessageId> {
        let mut out = Vec::new();
        if let Some(queue) = self.pending.get_mut(&actor) {
            for (p, &rel) in queue.iter_mut().zip(released) {
                if !rel {
                    continue;
                }
                if p.hold == 0 {
                    out.push(p.msg.id);
                } else {
                    p.hold -= 1;
                }
            }
        }
        out
    }

    pub fn find_pending(&self, key: &MessageKey) -> Option<MessageId> {
        self.pending_for(key.receiver)
            .iter()
            .find(|p| p.key == *key)
            .map(|p| p.msg.id)
    }

    fn quiescent(&self) -> bool {
        let crashes_done = self
            .plan
            .mid_run
            .iter()
            .filter(|c| self.members.contains(&c.pid))
            .all(|c| self.crashed.contains(&c.pid));
        crashes_done
            && self.all_correct_decided()
            && self.live().iter().all(|p| self.pending_for(*p).is_empty())
    }

    /// Executes one step of `actor`.
    pub fn step(
        &mut self,
        actor: ProcessId,
        deliver: &[MessageId],
        fd: Option<FdOutput>,
        hold: &mut dyn FnMut(&Message) -> u32,
    ) -> Result<StepSummary, SimError> {
        let time = self.time();
        if !self.members.contains(&actor) || self.crashed.contains(&actor) {
            return Err(SimError::Schedule {
                time,
                reason: format!("{actor} cannot take a step"),
            });
        }
        let queue = self.pending.get_mut(&actor).expect("member has a buffer");
        let mut delivered = Vec::with_capacity(deliver.len());
        for id in deliver {
            let pos =
                queue
                    .iter()
                    .position(|p| p.msg.id == *id)
                    .ok_or_else(|| SimError::Schedule {
                        time,
                        reason: format!("message {id} is not pending for {actor}"),
                    })?;
            delivered.push(queue.remove(pos).msg);
        }
        delivered.sort_by_key(|m| m.id);

        let state = &self.states[&actor];
        let (next, outgoing) = self
            .alg
            .step(state, &delivered, fd.as_ref())
            .map_err(|source| SimError::Algorithm {
                time,
                pid: actor,
                source,
            })?;
        let changed = next != *state;

        let count = self
            .local_steps
            .get_mut(&actor)
            .expect("member has a step count");
        *count += 1;
        let local = *count;
        let crash = self
            .plan
            .mid_run_for(actor)
            .filter(|c| c.after_step == local)
            .cloned();

        let mut seq: BTreeMap<ProcessId, u32> = BTreeMap::new();
        let mut sent = Vec::new();
        for out in outgoing {
            let s = seq.entry(out.to).or_insert(0);
            let key = MessageKey {
                sender: actor,
                sender_step: local,
                receiver: out.to,
                seq: *s,
            };
            *s += 1;
            if crash.as_ref().is_some_and(|c| c.omit.contains(&out.to)) {
                continue;
            }
            let msg = Message {
                id: MessageId(self.next_id),
                sender: actor,
                receiver: out.to,
                payload: out.payload,
                sent_at: time,
            };
            self.next_id += 1;
            if let Some(q) = self.pending.get_mut(&out.to) {
                q.push(Pending {
                    hold: hold(&msg),
                    msg: msg.clone(),
                    key,
                });
            }
            sent.push(msg);
        }

        let decided = self.alg.decision(&next);
        self.states.insert(actor, next);
        if crash.is_some() {
            self.crashed.insert(actor);
        }
        let silent = delivered.is_empty() && sent.is_empty() && !changed;
        self.steps.push(StepRecord {
            time,
            actor,
            delivered: delivered.iter().map(|m| m.id).collect(),
            fd,
            sent,
            decided,
        });
        Ok(StepSummary { silent })
    }

    /// One round-robin pass over the live processes.
    ///
    /// The run is quiescent once a whole round is silent (nothing delivered,
    /// nothing sent, no state change) and, after it, every correct process
    /// has decided, every planned crash happened and no live process has
    /// pending messages.
    pub fn round(
        &mut self,
        budget: u64,
        policy: &mut dyn Policy<A>,
    ) -> Result<RoundOutcome, SimError>
    where
        Self: Sized,
    {
        let start = self.time();
        let mut silent = true;
        for actor in self.live() {
            if self.crashed.contains(&actor) {
                continue;
            }
            if self.steps.len() as u64 >= budget {
                return Ok(RoundOutcome::BudgetExhausted);
            }
            let (deliver, fd) = policy.choose(self, actor);
            let summary = self.step(actor, &deliver, fd, &mut |m| policy.hold(m))?;
            silent &= summary.silent;
        }
        if silent && self.quiescent() {
            return Ok(RoundOutcome::Quiescent { from: start });
        }
        Ok(RoundOutcome::Progress)
    }

    /// Rounds with [`DeliverAll`] until quiescent or out of budget.
    pub fn finish(&mut self, budget: u64) -> Result<TraceStatus, SimError> {
        let mut policy = DeliverAll;
        loop {
            match self.round(budget, &mut policy)? {
                RoundOutcome::Quiescent { from } => {
                    return Ok(TraceStatus::Complete {
                        quiescent_from: from,
                    })
                }
                RoundOutcome::BudgetExhausted => return Ok(TraceStatus::Truncated),
                RoundOutcome::Progress => {}
            }
        }
    }

    pub fn into_trace(self, seed: u64, status: TraceStatus) -> Trace {
        Trace {
            params: self.params,
            members: self.members,
            inputs: self.inputs,
            crash_plan: self.plan,
            seed,
            algorithm: self.alg.name(),
            steps: self.steps,
            status,
        }
    }
}
