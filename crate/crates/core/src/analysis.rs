//! Property checkers over traces, indistinguishability and compatibility of
//! runs, T-independence witnesses and the solvability arithmetic.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::model::{
    derive_failure_pattern, CrashPlan, ProcessId, SystemParams, Time, Trace, Value,
};
use crate::sim::{
    run_simulation, state_sequences, AdversaryKind, Algorithm, Release, Scenario, SimError,
};
use crate::verdict::{Verdict, Witness};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AnalysisError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("partition needs k <= (n-1)/(n-f), but {k}*{l} = {lhs} > {rhs} = n-1")]
    PartitionTooLarge { k: u32, l: u32, lhs: u64, rhs: u64 },
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Fails when more than `k` distinct values are decided by any processes,
/// faulty ones included.
pub fn check_agreement(trace: &Trace, k: u32) -> Verdict {
    let mut first: BTreeMap<Value, (ProcessId, Time)> = BTreeMap::new();
    for (p, (t, v)) in trace.decisions() {
        let e = first.entry(v).or_insert((p, t));
        if t < e.1 {
            *e = (p, t);
        }
    }
    if first.len() <= k as usize {
        return Verdict::pass("agreement");
    }
    Verdict::fail(
        "agreement",
        Witness {
            processes: first.values().map(|&(p, _)| p).collect(),
            steps: first.values().map(|&(_, t)| t).collect(),
            values: first.keys().copied().collect(),
            detail: format!("{} distinct decisions, k = {k}", first.len()),
        },
    )
}

/// Fails when some decision is not the input of any process.
pub fn check_validity(trace: &Trace) -> Verdict {
    let proposed: BTreeSet<Value> = trace.inputs.values().copied().collect();
    let bad: Vec<(ProcessId, Time, Value)> = trace
        .decisions()
        .into_iter()
        .filter(|(_, (_, v))| !proposed.contains(v))
        .map(|(p, (t, v))| (p, t, v))
        .collect();
    if bad.is_empty() {
        return Verdict::pass("validity");
    }
    Verdict::fail(
        "validity",
        Witness {
            processes: bad.iter().map(|b| b.0).collect(),
            steps: bad.iter().map(|b| b.1).collect(),
            values: bad.iter().map(|b| b.2).collect(),
            detail: "decided value was never proposed".into(),
        },
    )
}

/// Fails when a correct process never decides. Truncated traces give an
/// indeterminate verdict.
pub fn check_termination(trace: &Trace) -> Verdict {
    if !trace.is_complete() {
        return Verdict::indeterminate("termination", "trace is truncated");
    }
    let pattern = match derive_failure_pattern(trace) {
        Ok(p) => p,
        Err(e) => return Verdict::fail("termination", Witness::detail(e.to_string())),
    };
    let decided = trace.decisions();
    let undecided: Vec<ProcessId> = pattern
        .correct()
        .into_iter()
        .filter(|p| !decided.contains_key(p))
        .collect();
    if undecided.is_empty() {
        Verdict::pass("termination")
    } else {
        Verdict::fail(
            "termination",
            Witness {
                processes: undecided,
                detail: "correct process never decides".into(),
                ..Witness::default()
            },
        )
    }
}

/// Runs the three agreement-task checks.
pub fn check_all(trace: &Trace, k: u32) -> [Verdict; 3] {
    [
        check_agreement(trace, k),
        check_validity(trace),
        check_termination(trace),
    ]
}

/// Prefix of a state sequence up to and including the first deciding state.
fn until_decision<'s, A: Algorithm>(algorithm: &A, seq: &'s [A::State]) -> &'s [A::State] {
    match seq.iter().position(|s| algorithm.decision(s).is_some()) {
        Some(i) => &seq[..=i],
        None => seq,
    }
}

/// Passes iff every `p ∈ d` runs through the same local states in `a` and
/// `b` up to and including its deciding step. A process that never decides
/// must have identical complete state sequences. States are reconstructed by
/// re-executing `algorithm`.
pub fn indistinguishable_until_decision<A: Algorithm>(
    algorithm: &A,
    a: &Trace,
    b: &Trace,
    d: &BTreeSet<ProcessId>,
) -> Verdict {
    const CHECK: &str = "indistinguishable";
    let seq_a = match state_sequences(a, algorithm) {
        Ok(s) => s,
        Err(w) => {
            return Verdict::fail(
                CHECK,
                Witness {
                    detail: format!("first trace: {}", w.detail),
                    ..w
                },
            )
        }
    };
    let seq_b = match state_sequences(b, algorithm) {
        Ok(s) => s,
        Err(w) => {
            return Verdict::fail(
                CHECK,
                Witness {
                    detail: format!("second trace: {}", w.detail),
                    ..w
                },
            )
        }
    };
    for &p in d {
        let (Some(sa), Some(sb)) = (seq_a.get(&p), seq_b.get(&p)) else {
            return Verdict::fail(
                CHECK,
                Witness {
                    processes: vec![p],
                    detail: format!("{p} is missing from one of the traces"),
                    ..Witness::default()
                },
            );
        };
        let (pa, pb) = (until_decision(algorithm, sa), until_decision(algorithm, sb));
        if pa == pb {
            continue;
        }
        let at = pa
            .iter()
            .zip(pb)
            .position(|(x, y)| x != y)
            .unwrap_or(pa.len().min(pb.len()));
        return Verdict::fail(
            CHECK,
            Witness {
                processes: vec![p],
                steps: vec![at as Time],
                detail: format!("state sequences of {p} differ at local step {at}"),
                ..Witness::default()
            },
        );
    }
    Verdict::pass(CHECK)
}

/// Passes iff every run in `runs_a` is indistinguishable until decision,
/// for `d`, from some run in `runs_b`.
pub fn compatible<A: Algorithm>(
    algorithm: &A,
    runs_a: &[Trace],
    runs_b: &[Trace],
    d: &BTreeSet<ProcessId>,
) -> Verdict {
    for (i, a) in runs_a.iter().enumerate() {
        if !runs_b
            .iter()
            .any(|b| indistinguishable_until_decision(algorithm, a, b, d).passed())
        {
            return Verdict::fail(
                "compatible",
                Witness {
                    processes: d.iter().copied().collect(),
                    detail: format!("run {i} of the first set has no match"),
                    ..Witness::default()
                },
            );
        }
    }
    Verdict::pass("compatible")
}

/// Step budget for a T-independence witness run.
pub fn independence_budget(params: SystemParams) -> u64 {
    200 * u64::from(params.n()).pow(2)
}

/// Runs `algorithm` with every message from outside `s` to `s` withheld
/// until each member of `s` has decided or crashed. Passes iff the run is
/// complete and no member of `s` received a message from outside `s` before
/// deciding.
pub fn t_independence_witness<A: Algorithm>(
    algorithm: &A,
    s: &BTreeSet<ProcessId>,
    params: SystemParams,
    seed: u64,
) -> Result<(Verdict, Trace), AnalysisError> {
    const CHECK: &str = "t-independence";
    let scenario = Scenario::new(params)
        .with_adversary(AdversaryKind::Isolate { group: s.clone() })
        .with_seed(seed)
        .with_step_budget(independence_budget(params));
    let trace = run_simulation(algorithm, &scenario)?;
    if !trace.is_complete() {
        let undecided: Vec<ProcessId> = s
            .iter()
            .copied()
            .filter(|&p| trace.decision_of(p).is_none())
            .collect();
        let verdict = Verdict::fail(
            CHECK,
            Witness {
                processes: undecided,
                detail: "step budget exhausted before every member of S decided".into(),
                ..Witness::default()
            },
        );
        return Ok((verdict, trace));
    }
    let index = trace.message_index();
    let decisions = trace.decisions();
    for step in trace.steps.iter().filter(|st| s.contains(&st.actor)) {
        let decided_before = decisions
            .get(&step.actor)
            .is_some_and(|&(t, _)| t < step.time);
        if decided_before {
            continue;
        }
        if let Some(m) = step
            .delivered
            .iter()
            .map(|id| index[id])
            .find(|m| !s.contains(&m.sender))
        {
            let verdict = Verdict::fail(
                CHECK,
                Witness {
                    processes: vec![step.actor, m.sender],
                    steps: vec![step.time],
                    detail: "member of S heard from outside S before deciding".into(),
                    ..Witness::default()
                },
            );
            return Ok((verdict, trace));
        }
    }
    Ok((Verdict::pass(CHECK), trace))
}

/// `kn > (k+1)f`, equivalently `k > f/(n-f)`.
pub fn solvable(n: u32, f: u32, k: u32) -> bool {
    u64::from(k) * u64::from(n) > u64::from(k + 1) * u64::from(f)
}

/// Whether `(n, f, k)` lies exactly on the solvability boundary `kn = (k+1)f`.
pub fn is_border(n: u32, f: u32, k: u32) -> bool {
    u64::from(k) * u64::from(n) == u64::from(k + 1) * u64::from(f)
}

/// Largest `k` with `k <= (n-1)/(n-f)`; 0 when `f = 0`.
pub fn impossibility_bound(n: u32, f: u32) -> u32 {
    if f == 0 || f >= n {
        return 0;
    }
    (n - 1) / (n - f)
}

/// `k - 1` blocks of exactly `n - f` processes each, taken in id order, and
/// the block `D̄` of all remaining processes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub blocks: Vec<BTreeSet<ProcessId>>,
    pub rest: BTreeSet<ProcessId>,
}

pub fn build_partition(n: u32, f: u32, k: u32) -> Result<Partition, AnalysisError> {
    if n == 0 || f >= n || k == 0 {
        return Err(AnalysisError::InvalidParams(format!("n={n} f={f} k={k}")));
    }
    let l = n - f;
    let lhs = u64::from(k) * u64::from(l);
    let rhs = u64::from(n - 1);
    if lhs > rhs {
        return Err(AnalysisError::PartitionTooLarge { k, l, lhs, rhs });
    }
    let blocks = (0..k - 1)
        .map(|i| (i * l + 1..=(i + 1) * l).map(ProcessId).collect())
        .collect();
    let rest = ((k - 1) * l + 1..=n).map(ProcessId).collect();
    Ok(Partition { blocks, rest })
}

/// The partitioning run for an unsolvable `(n, f, k)`: `k + 1` blocks of
/// `n - f` processes in id order, the remaining processes initially dead,
/// inputs `x_p = p`, and all traffic between blocks held until every
/// correct process has decided.
pub fn partition_scenario(params: SystemParams) -> Result<Scenario, AnalysisError> {
    let (n, f, k) = (params.n(), params.f(), params.k());
    if solvable(n, f, k) {
        return Err(AnalysisError::InvalidParams(format!(
            "({n}, {f}, {k}) is solvable; no partitioning run exists"
        )));
    }
    let l = params.quota();
    let blocks: Vec<BTreeSet<ProcessId>> = (0..=k)
        .map(|i| (i * l + 1..=(i + 1) * l).map(ProcessId).collect())
        .collect();
    let dead = ((k + 1) * l + 1..=n).map(ProcessId);
    Ok(Scenario::new(params)
        .with_adversary(AdversaryKind::PartitionDelay {
            blocks,
            release: Release::AfterAllDecided,
        })
        .with_crash_plan(CrashPlan::initially_dead(dead)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{StepRecord, TraceStatus};
    use crate::protocol::TwoStage;
    use crate::verdict::Outcome;

    fn p(i: u32) -> ProcessId {
        ProcessId(i)
    }

    fn set(ids: &[u32]) -> BTreeSet<ProcessId> {
        ids.iter().map(|&i| p(i)).collect()
    }

    /// Synthetic trace in which process `i+1` decides `decisions[i]` at its
    /// only step, if any.
    fn synthetic(inputs: &[i64], decisions: &[Option<i64>], complete: bool) -> Trace {
        let n = inputs.len() as u32;
        let steps: Vec<StepRecord> = decisions
            .iter()
            .enumerate()
            .map(|(i, d)| StepRecord {
                time: i as Time + 1,
                actor: p(i as u32 + 1),
                delivered: vec![],
                fd: None,
                sent: vec![],
                decided: d.map(Value),
            })
            .collect();
        let len = steps.len() as Time;
        Trace {
            params: SystemParams::new(n, n - 1, 1).unwrap(),
            members: (1..=n).map(ProcessId).collect(),
            inputs: (1..=n)
                .map(ProcessId)
                .zip(inputs.iter().map(|&v| Value(v)))
                .collect(),
            crash_plan: CrashPlan::none(),
            seed: 0,
            algorithm: "synthetic".into(),
            steps,
            status: if complete {
                TraceStatus::Complete {
                    quiescent_from: len + 1,
                }
            } else {
                TraceStatus::Truncated
            },
        }
    }

    #[test]
    fn agreement_examples() {
        let t = synthetic(&[7, 7, 7], &[Some(7), Some(7), Some(7)], true);
        assert!(check_agreement(&t, 1).passed());
        let t = synthetic(&[1, 2, 3], &[Some(1), Some(3), None], true);
        let v = check_agreement(&t, 1);
        assert!(v.failed());
        let w = v.witness.unwrap();
        assert_eq!(w.values, vec![Value(1), Value(3)]);
        assert_eq!(w.steps, vec![1, 2]);
        assert!(check_agreement(&t, 2).passed());
    }

    #[test]
    fn validity_examples() {
        let t = synthetic(&[10, 20], &[Some(10), Some(20)], true);
        assert!(check_validity(&t).passed());
        let t = synthetic(&[1, 2, 3], &[Some(99), None, None], true);
        let v = check_validity(&t);
        assert!(v.failed());
        assert_eq!(v.witness.unwrap().values, vec![Value(99)]);
    }

    #[test]
    fn termination_examples() {
        // Everyone steps at the end, so everyone is correct.
        let mut t = synthetic(&[1, 2], &[Some(1), None], true);
        t.status = TraceStatus::Complete { quiescent_from: 1 };
        let v = check_termination(&t);
        assert!(v.failed());
        assert_eq!(v.witness.unwrap().processes, vec![p(2)]);
        let t = synthetic(&[1, 2], &[Some(1), None], false);
        assert_eq!(check_termination(&t).outcome, Outcome::Indeterminate);
    }

    #[test]
    fn termination_of_protocol_with_dead_process() {
        let params = SystemParams::new(3, 1, 1).unwrap();
        let s = Scenario::new(params).with_crash_plan(CrashPlan::initially_dead([p(3)]));
        let t = run_simulation(&TwoStage::default(), &s).unwrap();
        assert!(check_termination(&t).passed());
    }

    #[test]
    fn solvability_examples() {
        assert!(solvable(3, 1, 1));
        assert!(!solvable(4, 2, 1));
        assert!(is_border(4, 2, 1));
        for n in 2..10 {
            for k in 1..n {
                assert!(solvable(n, 0, k));
            }
        }
    }

    #[test]
    fn impossibility_bound_examples() {
        assert_eq!(impossibility_bound(5, 3), 2);
        assert_eq!(impossibility_bound(4, 2), 1);
        assert_eq!(impossibility_bound(7, 6), 6);
        assert_eq!(impossibility_bound(7, 0), 0);
    }

    #[test]
    fn build_partition_examples() {
        let part = build_partition(5, 3, 2).unwrap();
        assert_eq!(part.blocks, vec![set(&[1, 2])]);
        assert_eq!(part.rest, set(&[3, 4, 5]));
        let part = build_partition(6, 2, 1).unwrap();
        assert!(part.blocks.is_empty());
        assert_eq!(part.rest, set(&[1, 2, 3, 4, 5, 6]));
        assert!(matches!(
            build_partition(4, 2, 2),
            Err(AnalysisError::PartitionTooLarge { lhs: 4, rhs: 3, .. })
        ));
    }

    #[test]
    fn partition_scenario_layout() {
        let s = partition_scenario(SystemParams::new(7, 4, 1).unwrap()).unwrap();
        let AdversaryKind::PartitionDelay { blocks, .. } = &s.adversary else {
            panic!("expected a partition adversary");
        };
        assert_eq!(blocks, &vec![set(&[1, 2, 3]), set(&[4, 5, 6])]);
        assert_eq!(s.crash_plan.initially_dead, set(&[7]));
        assert!(partition_scenario(SystemParams::new(3, 1, 1).unwrap()).is_err());
    }

    #[test]
    fn indistinguishable_reflexive_and_input_sensitive() {
        let alg = TwoStage::default();
        let params = SystemParams::new(3, 1, 1).unwrap();
        let a = run_simulation(&alg, &Scenario::new(params).with_seed(4)).unwrap();
        let all = params.all();
        assert!(indistinguishable_until_decision(&alg, &a, &a, &all).passed());
        let mut inputs = a.inputs.clone();
        inputs.insert(p(1), Value(100));
        let b = run_simulation(
            &alg,
            &Scenario::new(params).with_seed(4).with_inputs(inputs),
        )
        .unwrap();
        let v = indistinguishable_until_decision(&alg, &a, &b, &set(&[1]));
        assert!(v.failed());
        assert_eq!(v.witness.unwrap().steps, vec![0]);
    }

    #[test]
    fn compatible_examples() {
        let alg = TwoStage::default();
        let params = SystemParams::new(3, 1, 1).unwrap();
        let runs: Vec<Trace> = (0..3)
            .map(|seed| run_simulation(&alg, &Scenario::new(params).with_seed(seed)).unwrap())
            .collect();
        let d = params.all();
        assert!(compatible(&alg, &runs, &runs, &d).passed());
        assert!(compatible(&alg, &[], &runs, &d).passed());
        assert!(compatible(&alg, &runs, &[], &d).failed());
    }

    #[test]
    fn t_independence_examples() {
        let alg = TwoStage::default();
        let params = SystemParams::new(5, 2, 2).unwrap();
        let (v, _) = t_independence_witness(&alg, &set(&[1, 2, 3]), params, 1).unwrap();
        assert!(v.passed(), "{v}");
        let (v, t) = t_independence_witness(&alg, &set(&[1, 2]), params, 1).unwrap();
        assert!(v.failed());
        assert!(!t.is_complete());
        let (v, _) = t_independence_witness(&alg, &params.all(), params, 1).unwrap();
        assert!(v.passed());
    }
}
