use std::collections::{BTreeMap, BTreeSet};

use super::*;
use crate::analysis::indistinguishable_until_decision;
use crate::model::codec::write_trace;
use crate::model::{derive_failure_pattern, MidRunCrash, Payload};
use crate::protocol::TwoStage;

fn p(i: u32) -> ProcessId {
    ProcessId(i)
}

fn set(ids: &[u32]) -> BTreeSet<ProcessId> {
    ids.iter().map(|&i| p(i)).collect()
}

fn params(n: u32, f: u32, k: u32) -> SystemParams {
    SystemParams::new(n, f, k).unwrap()
}

fn inputs(values: &[i64]) -> BTreeMap<ProcessId, Value> {
    values
        .iter()
        .enumerate()
        .map(|(i, &v)| (p(i as u32 + 1), Value(v)))
        .collect()
}

#[test]
fn three_processes_one_dead_agree_on_min_id_value() {
    let s = Scenario::new(params(3, 1, 1))
        .with_inputs(inputs(&[10, 20, 30]))
        .with_crash_plan(CrashPlan::initially_dead([p(3)]));
    let t = run_simulation(&TwoStage::default(), &s).unwrap();
    assert!(t.is_complete());
    t.validate().unwrap();
    assert_eq!(t.decision_of(p(1)).unwrap().1, Value(10));
    assert_eq!(t.decision_of(p(2)).unwrap().1, Value(10));
    assert!(t.decision_of(p(3)).is_none());
    assert_eq!(derive_failure_pattern(&t).unwrap().faulty(), set(&[3]));
}

#[test]
fn single_process_decides_at_second_step() {
    let s = Scenario::new(params(1, 0, 1)).with_inputs(inputs(&[5]));
    let t = run_simulation(&TwoStage::default(), &s).unwrap();
    assert!(t.is_complete());
    assert_eq!(t.decision_of(p(1)), Some((2, Value(5))));
    assert!(t.steps.iter().all(|s| s.sent.is_empty()));
}

#[test]
fn partition_delay_keeps_blocks_apart_until_all_decide() {
    let s = Scenario::new(params(4, 2, 1)).with_adversary(AdversaryKind::PartitionDelay {
        blocks: vec![set(&[1, 2]), set(&[3, 4])],
        release: Release::AfterAllDecided,
    });
    let t = run_simulation(&TwoStage::default(), &s).unwrap();
    assert!(t.is_complete());
    let last_decision = t.decisions().values().map(|&(time, _)| time).max().unwrap();
    assert_eq!(t.decisions().len(), 4);
    let index = t.message_index();
    let block = |q: ProcessId| q.0 <= 2;
    for step in &t.steps {
        for id in &step.delivered {
            let m = index[id];
            if block(m.sender) != block(m.receiver) {
                assert!(
                    step.time > last_decision,
                    "inter-block delivery at {}",
                    step.time
                );
            }
        }
    }
    assert_eq!(t.distinct_decisions(), [Value(1), Value(3)].into());
}

#[test]
fn release_at_step_lets_traffic_through() {
    let s = Scenario::new(params(4, 2, 1)).with_adversary(AdversaryKind::PartitionDelay {
        blocks: vec![set(&[1, 2]), set(&[3, 4])],
        release: Release::AtStep(1),
    });
    let t = run_simulation(&TwoStage::default(), &s).unwrap();
    assert!(t.is_complete());
}

#[test]
fn runs_are_deterministic_and_seed_sensitive() {
    let alg = TwoStage::default();
    let s = Scenario::new(params(6, 2, 1)).with_seed(17);
    let a = write_trace(&run_simulation(&alg, &s).unwrap());
    let b = write_trace(&run_simulation(&alg, &s).unwrap());
    assert_eq!(a, b);
    let texts: BTreeSet<String> = (0..8)
        .map(|seed| write_trace(&run_simulation(&alg, &s.clone().with_seed(seed)).unwrap()))
        .collect();
    assert!(texts.len() > 1, "the seed should change the schedule");
}

#[test]
fn fair_delivery_respects_the_bound() {
    let alg = TwoStage::default();
    for bound in [1u32, 2, 5, 64] {
        for seed in 0..10 {
            let s = Scenario::new(params(5, 2, 1))
                .with_seed(seed)
                .with_fairness_bound(bound);
            let t = run_simulation(&alg, &s).unwrap();
            assert!(t.is_complete());
            // Receiver steps between send and delivery, counted from the
            // first receiver step after sending.
            let index = t.message_index();
            for step in &t.steps {
                for id in &step.delivered {
                    let m = index[id];
                    let waited = t
                        .steps
                        .iter()
                        .filter(|s| {
                            s.actor == m.receiver && s.time > m.sent_at && s.time < step.time
                        })
                        .count();
                    assert!(
                        waited < bound as usize,
                        "bound {bound} seed {seed}: waited {waited}"
                    );
                }
            }
        }
    }
}

#[test]
fn initial_crash_adversary_uses_the_failure_budget() {
    let alg = TwoStage::default();
    for seed in 0..10 {
        let s = Scenario::new(params(6, 3, 2))
            .with_seed(seed)
            .with_adversary(AdversaryKind::InitialCrash);
        let t = run_simulation(&alg, &s).unwrap();
        assert_eq!(t.crash_plan.initially_dead.len(), 3);
        assert!(t.is_complete());
        for dead in &t.crash_plan.initially_dead {
            assert_eq!(t.steps_of(*dead).count(), 0);
        }
    }
}

#[test]
fn too_many_failures_are_rejected() {
    let s = Scenario::new(params(3, 1, 1)).with_crash_plan(CrashPlan::initially_dead([p(1), p(2)]));
    assert!(matches!(
        run_simulation(&TwoStage::default(), &s),
        Err(SimError::TooManyFailures { planned: 2, f: 1 })
    ));
}

#[test]
fn invalid_scenarios_are_rejected() {
    let base = Scenario::new(params(4, 2, 1));
    let overlapping = base.clone().with_adversary(AdversaryKind::PartitionDelay {
        blocks: vec![set(&[1, 2]), set(&[2, 3])],
        release: Release::AfterAllDecided,
    });
    assert!(overlapping.validate().is_err());
    assert!(base.clone().with_fairness_bound(0).validate().is_err());
    let mut missing = base.clone();
    missing.inputs.remove(&p(2));
    assert!(missing.validate().is_err());
    let zero_step = base.with_crash_plan(CrashPlan {
        initially_dead: BTreeSet::new(),
        mid_run: vec![MidRunCrash {
            pid: p(1),
            after_step: 0,
            omit: BTreeSet::new(),
        }],
    });
    assert!(zero_step.validate().is_err());
}

#[test]
fn mid_run_crash_omits_configured_receivers() {
    let plan = CrashPlan {
        initially_dead: BTreeSet::new(),
        mid_run: vec![MidRunCrash {
            pid: p(2),
            after_step: 1,
            omit: set(&[1, 3]),
        }],
    };
    let s = Scenario::new(params(4, 1, 1)).with_crash_plan(plan);
    let t = run_simulation(&TwoStage::default(), &s).unwrap();
    let steps: Vec<_> = t.steps_of(p(2)).collect();
    assert_eq!(steps.len(), 1);
    let receivers: Vec<ProcessId> = steps[0].sent.iter().map(|m| m.receiver).collect();
    assert_eq!(receivers, vec![p(4)]);
    assert!(replay(&t, &TwoStage::default()).passed());
    let pattern = derive_failure_pattern(&t).unwrap();
    assert_eq!(pattern.faulty(), set(&[2]));
    assert_eq!(pattern.crash_time(p(2)), Some(steps[0].time + 1));
}

#[test]
fn replay_accepts_simulated_traces() {
    let alg = TwoStage::default();
    for seed in 0..5 {
        let s = Scenario::new(params(5, 2, 1))
            .with_seed(seed)
            .with_adversary(AdversaryKind::InitialCrash);
        let t = run_simulation(&alg, &s).unwrap();
        assert!(replay(&t, &alg).passed());
    }
}

#[test]
fn replay_catches_a_deleted_message() {
    let alg = TwoStage::default();
    let mut t = run_simulation(&alg, &Scenario::new(params(3, 1, 1))).unwrap();
    // The deletion shows up at the sending step, before the missing delivery.
    t.steps[0].sent.remove(0);
    let v = replay(&t, &alg);
    assert!(v.failed());
    assert_eq!(v.witness.unwrap().steps, vec![1]);
}

#[test]
fn replay_catches_an_edited_decision() {
    let alg = TwoStage::default();
    let mut t = run_simulation(&alg, &Scenario::new(params(3, 1, 1))).unwrap();
    let si = t.steps.iter().position(|s| s.decided.is_some()).unwrap();
    t.steps[si].decided = Some(Value(99));
    let v = replay(&t, &alg);
    assert!(v.failed());
    assert_eq!(v.witness.unwrap().steps, vec![si as Time + 1]);
}

/// Two processes, n = 2, f = 0, L = 2: each broadcasts its id, then the
/// stage-2 message, then decides one step later. Written out by hand.
#[test]
fn replay_accepts_hand_written_trace() {
    use crate::model::{Message, MessageId, StepRecord};
    let params = params(2, 0, 1);
    let s1 = |id, from: u32, to: u32, at| Message {
        id: MessageId(id),
        sender: p(from),
        receiver: p(to),
        payload: Payload::Stage1,
        sent_at: at,
    };
    let s2 = |id, from: u32, to: u32, v, at| Message {
        id: MessageId(id),
        sender: p(from),
        receiver: p(to),
        payload: Payload::Stage2 {
            proposal: Value(v),
            heard: set(&[to]),
        },
        sent_at: at,
    };
    let step = |time, actor, delivered: Vec<u64>, sent, decided: Option<i64>| StepRecord {
        time,
        actor: p(actor),
        delivered: delivered.into_iter().map(MessageId).collect(),
        fd: None,
        sent,
        decided: decided.map(Value),
    };
    let trace = Trace {
        params,
        members: params.all(),
        inputs: inputs(&[4, 9]),
        crash_plan: CrashPlan::none(),
        seed: 0,
        algorithm: "two-stage".into(),
        steps: vec![
            step(1, 1, vec![], vec![s1(1, 1, 2, 1)], None),
            step(2, 2, vec![1], vec![s1(2, 2, 1, 2), s2(3, 2, 1, 9, 2)], None),
            step(3, 1, vec![2, 3], vec![s2(4, 1, 2, 4, 3)], None),
            step(4, 2, vec![4], vec![], Some(4)),
            step(5, 1, vec![], vec![], Some(4)),
            step(6, 2, vec![], vec![], Some(4)),
            step(7, 1, vec![], vec![], Some(4)),
        ],
        status: TraceStatus::Complete { quiescent_from: 6 },
    };
    trace.validate().unwrap();
    let v = replay(&trace, &TwoStage::default());
    assert!(v.passed(), "{v}");
}

#[test]
fn restriction_to_everyone_is_the_identity() {
    let alg = TwoStage::default();
    let params = params(4, 1, 1);
    let r = restrict_algorithm(alg, params.all()).unwrap();
    let s = Scenario::new(params).with_seed(3);
    let a = run_simulation(&alg, &s).unwrap();
    let mut b = run_simulation(&r, &s).unwrap();
    assert_eq!(b.algorithm, "two-stage|{1,2,3,4}");
    b.algorithm = a.algorithm.clone();
    assert_eq!(a, b);
}

#[test]
fn restricted_broadcast_stays_inside_the_domain() {
    let alg = TwoStage::default();
    let params = params(4, 2, 1);
    let r = restrict_algorithm(alg, set(&[1, 2])).unwrap();
    let state = r.init(p(1), &params, Value(1));
    let (_, out) = r.step(&state, &[], None).unwrap();
    let to: Vec<ProcessId> = out.iter().map(|o| o.to).collect();
    assert_eq!(to, vec![p(2)]);
    assert!(matches!(
        restrict_algorithm(alg, BTreeSet::new()),
        Err(SimError::EmptyRestriction)
    ));
}

#[test]
fn restricted_run_embeds_into_full_system() {
    let alg = TwoStage::default();
    let params = params(5, 2, 1);
    let d = set(&[2, 3, 5]);
    let r = restrict_algorithm(alg, d.clone()).unwrap();
    for seed in 0..5 {
        let s = Scenario::new(params)
            .with_members(d.clone())
            .with_seed(seed);
        let restricted = run_simulation(&r, &s).unwrap();
        assert!(restricted.is_complete());
        let full = embed_restricted_run(&alg, &restricted).unwrap();
        assert_eq!(full.crash_plan.initially_dead, set(&[1, 4]));
        assert!(full.is_complete());
        assert!(replay(&full, &alg).passed());
        let v = indistinguishable_until_decision(&alg, &restricted, &full, &d);
        assert!(v.passed(), "{v}");
    }
}

#[test]
fn embedding_needs_enough_failure_budget() {
    let alg = TwoStage::default();
    let params = params(5, 1, 1);
    let d = set(&[1, 2, 3]);
    let r = restrict_algorithm(alg, d.clone()).unwrap();
    let restricted = run_simulation(&r, &Scenario::new(params).with_members(d)).unwrap();
    assert!(matches!(
        embed_restricted_run(&alg, &restricted),
        Err(SimError::TooManyFailures { .. })
    ));
}

fn block_run(params: SystemParams, block: &BTreeSet<ProcessId>, seed: u64) -> Trace {
    let dead: Vec<ProcessId> = params.all().difference(block).copied().collect();
    let s = Scenario::new(params)
        .with_seed(seed)
        .with_crash_plan(CrashPlan::initially_dead(dead));
    run_simulation(&TwoStage::default(), &s).unwrap()
}

#[test]
fn pasting_two_blocks_gives_two_decisions() {
    let alg = TwoStage::default();
    let params = params(4, 2, 1);
    let blocks = vec![set(&[1, 2]), set(&[3, 4])];
    let runs: Vec<Trace> = blocks.iter().map(|b| block_run(params, b, 5)).collect();
    let pasted = paste_runs(&alg, &blocks, &runs).unwrap();
    assert!(pasted.is_complete());
    assert!(replay(&pasted, &alg).passed());
    assert_eq!(pasted.distinct_decisions(), [Value(1), Value(3)].into());
    for (b, r) in blocks.iter().zip(&runs) {
        assert!(indistinguishable_until_decision(&alg, &pasted, r, b).passed());
    }
    assert!(pasted.crash_plan.initially_dead.is_empty());
}

#[test]
fn pasting_a_single_block_reproduces_the_run() {
    let alg = TwoStage::default();
    let params = params(4, 1, 1);
    let run = run_simulation(&alg, &Scenario::new(params).with_seed(2)).unwrap();
    let pasted = paste_runs(&alg, &[params.all()], std::slice::from_ref(&run)).unwrap();
    assert!(indistinguishable_until_decision(&alg, &pasted, &run, &params.all()).passed());
}

#[test]
fn paste_rejects_bad_inputs() {
    let alg = TwoStage::default();
    let params = params(4, 2, 1);
    let blocks = vec![set(&[1, 2]), set(&[3, 4])];
    let runs: Vec<Trace> = blocks.iter().map(|b| block_run(params, b, 0)).collect();
    let overlapping = vec![set(&[1, 2, 3]), set(&[3, 4])];
    assert!(matches!(
        paste_runs(&alg, &overlapping, &runs),
        Err(SimError::Paste(_))
    ));
    let swapped = vec![runs[1].clone(), runs[0].clone()];
    assert!(paste_runs(&alg, &blocks, &swapped).is_err());
    assert!(paste_runs(&alg, &blocks, &runs[..1]).is_err());
}
