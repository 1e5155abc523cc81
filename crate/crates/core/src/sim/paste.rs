use std::collections::{BTreeMap, BTreeSet};

use crate::model::{CrashPlan, ProcessId, Time, Trace};

use super::executor::{message_keys, Executor};
use super::{Algorithm, SimError, DEFAULT_STEP_BUDGET};

fn paste_err(msg: impl Into<String>) -> SimError {
    SimError::Paste(msg.into())
}

/// Time by which every member of `block` has decided or taken its last step.
fn completion_time(run: &Trace, block: &BTreeSet<ProcessId>) -> Time {
    block
        .iter()
        .filter_map(|&p| {
            run.decision_of(p)
                .map(|(t, _)| t)
                .or_else(|| run.steps_of(p).last().map(|s| s.time))
        })
        .max()
        .unwrap_or(0)
}

/// Composes per-block runs into one run of the full system.
///
/// `runs[i]` must be a complete run of `algorithm` over all of `1..=n` in
/// which every process outside `partition[i]` is initially dead. The pasted
/// run executes the prefix of each block run up to that block's completion
/// time, one block after the other, while every message between blocks stays
/// in transit. After the last prefix, i.e. from time τ on, all pending
/// messages are delivered. Each block member therefore passes through the
/// same states as in its block run until it decides; send times differ.
pub fn paste_runs<A: Algorithm>(
    algorithm: &A,
    partition: &[BTreeSet<ProcessId>],
    runs: &[Trace],
) -> Result<Trace, SimError> {
    if partition.is_empty() || partition.len() != runs.len() {
        return Err(paste_err("need one run per block"));
    }
    let params = runs[0].params;
    let all = params.all();
    let mut covered = BTreeSet::new();
    for block in partition {
        if block.is_empty() {
            return Err(paste_err("empty block"));
        }
        if !covered.is_disjoint(block) {
            return Err(paste_err("blocks overlap"));
        }
        covered.extend(block.iter().copied());
    }
    if covered != all {
        return Err(paste_err("blocks do not cover 1..=n"));
    }

    let mut plan = CrashPlan::none();
    let mut inputs = BTreeMap::new();
    for (i, (block, run)) in partition.iter().zip(runs).enumerate() {
        if run.params != params || run.members != all {
            return Err(paste_err(format!(
                "run {i} is not over the full system {params}"
            )));
        }
        if !run.is_complete() {
            return Err(paste_err(format!("run {i} is truncated")));
        }
        let outside: BTreeSet<ProcessId> = all.difference(block).copied().collect();
        if !outside.is_subset(&run.crash_plan.initially_dead) {
            return Err(paste_err(format!(
                "run {i} has live processes outside its block"
            )));
        }
        if run
            .crash_plan
            .mid_run
            .iter()
            .any(|c| !block.contains(&c.pid))
        {
            return Err(paste_err(format!(
                "run {i} crashes a process outside its block"
            )));
        }
        if let Some(s) = run.steps.iter().find(|s| !block.contains(&s.actor)) {
            return Err(paste_err(format!(
                "run {i} has a step of {} at time {}",
                s.actor, s.time
            )));
        }
        plan.initially_dead
            .extend(run.crash_plan.initially_dead.intersection(block).copied());
        plan.mid_run.extend(run.crash_plan.mid_run.iter().cloned());
        for &p in block {
            inputs.insert(p, run.inputs[&p]);
        }
    }

    let mut exec = Executor::new(algorithm, params, all, inputs, plan);
    for (i, (block, run)) in partition.iter().zip(runs).enumerate() {
        let keys = message_keys(run);
        let end = completion_time(run, block);
        for step in run.steps.iter().take_while(|s| s.time <= end) {
            let deliver = step
                .delivered
                .iter()
                .map(|id| {
                    keys.get(id)
                        .and_then(|key| exec.find_pending(key))
                        .ok_or_else(|| {
                            paste_err(format!(
                                "run {i}: message {id} delivered at time {} has no counterpart",
                                step.time
                            ))
                        })
                })
                .collect::<Result<Vec<_>, _>>()?;
            exec.step(step.actor, &deliver, step.fd.clone(), &mut |_| 0)?;
        }
    }
    let budget = exec.time() + DEFAULT_STEP_BUDGET;
    let status = exec.finish(budget)?;
    let seed = runs[0].seed;
    Ok(exec.into_trace(seed, status))
}
