use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::model::{Message, MessageId, ProcessId, Time, Trace};
use crate::verdict::{Verdict, Witness};

use super::Algorithm;

const CHECK: &str = "replay";

/// Re-executes `trace` step by step with `algorithm` and compares every
/// recorded sent set and decision with what the algorithm produces. A
/// process's final step as a mid-run crash must omit exactly the receivers
/// the crash plan names. Fails at the first divergent step.
pub fn replay<A: Algorithm>(trace: &Trace, algorithm: &A) -> Verdict {
    match run(trace, algorithm, true) {
        Ok(_) => Verdict::pass(CHECK),
        Err(w) => Verdict::fail(CHECK, w),
    }
}

/// Per-process state sequences reconstructed from the transition function:
/// entry 0 is the initial state, entry `i` the state after the `i`-th step.
/// Sent sets are not checked.
pub fn state_sequences<A: Algorithm>(
    trace: &Trace,
    algorithm: &A,
) -> Result<BTreeMap<ProcessId, Vec<A::State>>, Witness> {
    run(trace, algorithm, false)
}

fn run<A: Algorithm>(
    trace: &Trace,
    algorithm: &A,
    check_output: bool,
) -> Result<BTreeMap<ProcessId, Vec<A::State>>, Witness> {
    let mut seqs: BTreeMap<ProcessId, Vec<A::State>> = BTreeMap::new();
    for &p in &trace.members {
        let input = trace
            .inputs
            .get(&p)
            .ok_or_else(|| Witness::at_step(0, format!("no input for {p}")))?;
        seqs.insert(p, vec![algorithm.init(p, &trace.params, *input)]);
    }
    let mut pending: HashMap<MessageId, Message> = HashMap::new();
    let mut used_ids: BTreeSet<MessageId> = BTreeSet::new();
    let mut local: BTreeMap<ProcessId, u32> = BTreeMap::new();

    for (i, step) in trace.steps.iter().enumerate() {
        let t: Time = step.time;
        let fail = |detail: String| Witness {
            processes: vec![step.actor],
            steps: vec![t],
            values: vec![],
            detail,
        };
        if t != i as Time + 1 {
            return Err(fail(format!("expected time {}", i + 1)));
        }
        let Some(states) = seqs.get(&step.actor) else {
            return Err(fail(format!("{} is not a member", step.actor)));
        };
        if trace.crash_plan.initially_dead.contains(&step.actor) {
            return Err(fail(format!("{} is initially dead but steps", step.actor)));
        }
        let count = local.entry(step.actor).or_insert(0);
        *count += 1;
        let crash = trace.crash_plan.mid_run_for(step.actor);
        if crash.is_some_and(|c| *count > c.after_step) {
            return Err(fail(format!("{} steps after its crash", step.actor)));
        }
        let mut delivered = Vec::with_capacity(step.delivered.len());
        for id in &step.delivered {
            match pending.remove(id) {
                Some(m) if m.receiver == step.actor => delivered.push(m),
                Some(m) => {
                    return Err(fail(format!("message {id} is addressed to {}", m.receiver)));
                }
                None => return Err(fail(format!("message {id} is not pending"))),
            }
        }
        delivered.sort_by_key(|m| m.id);
        let current = states.last().expect("initial state present");
        let (next, outgoing) = algorithm
            .step(current, &delivered, step.fd.as_ref())
            .map_err(|e| fail(format!("algorithm error: {e}")))?;

        if check_output {
            let expected: Vec<_> = outgoing
                .iter()
                .filter(|o| {
                    !crash.is_some_and(|c| c.after_step == *count && c.omit.contains(&o.to))
                })
                .map(|o| (o.to, &o.payload))
                .collect();
            let recorded: Vec<_> = step.sent.iter().map(|m| (m.receiver, &m.payload)).collect();
            if expected != recorded {
                return Err(fail(format!(
                    "sent {} message(s), algorithm sends {}",
                    recorded.len(),
                    expected.len()
                )));
            }
            let decision = algorithm.decision(&next);
            if decision != step.decided {
                return Err(Witness {
                    values: decision.into_iter().chain(step.decided).collect(),
                    ..fail("recorded decision differs from the algorithm's".into())
                });
            }
        }
        for m in &step.sent {
            if m.sender != step.actor || m.sent_at != t || !used_ids.insert(m.id) {
                return Err(fail(format!(
                    "message {} has a bad header or reused id",
                    m.id
                )));
            }
            pending.insert(m.id, m.clone());
        }
        seqs.get_mut(&step.actor).expect("member").push(next);
    }
    Ok(seqs)
}
