use std::collections::BTreeSet;

use proptest::prelude::*;

use kset_core::detectors::{check_omega_k, check_sigma_k, gen_partition_history, FdHistory};
use kset_core::model::{FailurePattern, ProcessId, Time};

/// A partition of `1..=n` from block labels, plus a pattern crashing a
/// subset of processes at times within the horizon, keeping one correct.
fn case() -> impl Strategy<Value = (Vec<BTreeSet<ProcessId>>, FailurePattern, Time, Time)> {
    (1u32..=7, 1u64..=10).prop_flat_map(|(n, horizon)| {
        (
            proptest::collection::vec(0usize..n as usize, n as usize),
            proptest::collection::vec(proptest::option::of(1..=horizon), n as usize),
            1..=horizon,
            Just(horizon),
        )
            .prop_map(move |(labels, crashes, t_gst, horizon)| {
                let mut ids: Vec<usize> = labels.clone();
                ids.sort();
                ids.dedup();
                let blocks: Vec<BTreeSet<ProcessId>> = ids
                    .iter()
                    .map(|l| {
                        (1..=n)
                            .filter(|&p| labels[p as usize - 1] == *l)
                            .map(ProcessId)
                            .collect()
                    })
                    .collect();
                let mut crash_time: std::collections::BTreeMap<ProcessId, Time> = crashes
                    .iter()
                    .enumerate()
                    .filter_map(|(i, c)| c.map(|t| (ProcessId(i as u32 + 1), t)))
                    .collect();
                if crash_time.len() == n as usize {
                    crash_time.remove(&ProcessId(1));
                }
                let pattern =
                    FailurePattern::new((1..=n).map(ProcessId).collect(), crash_time).unwrap();
                (blocks, pattern, t_gst, horizon)
            })
    })
}

fn leaders(pattern: &FailurePattern, k: usize) -> BTreeSet<ProcessId> {
    let mut order: Vec<ProcessId> = pattern.correct().into_iter().collect();
    order.extend(pattern.faulty());
    order.into_iter().take(k).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn partition_histories_pass_both_checks((blocks, pattern, t_gst, horizon) in case()) {
        let k = blocks.len();
        let h = gen_partition_history(&blocks, &pattern, t_gst, &leaders(&pattern, k), horizon).unwrap();
        prop_assert!(check_sigma_k(&h, k as u32).passed());
        prop_assert!(check_omega_k(&h, k as u32).passed());
    }

    #[test]
    fn same_block_outputs_intersect((blocks, pattern, t_gst, horizon) in case()) {
        let k = blocks.len();
        let h = gen_partition_history(&blocks, &pattern, t_gst, &leaders(&pattern, k), horizon).unwrap();
        for b in &blocks {
            for &p in b {
                for &q in b {
                    for t in 1..=horizon {
                        for u in 1..=horizon {
                            prop_assert!(!h.sigma(p, t).is_disjoint(h.sigma(q, u)));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn crashed_processes_output_everyone((blocks, pattern, t_gst, horizon) in case()) {
        let k = blocks.len();
        let h = gen_partition_history(&blocks, &pattern, t_gst, &leaders(&pattern, k), horizon).unwrap();
        let all: BTreeSet<ProcessId> = pattern.processes().clone();
        for p in pattern.faulty() {
            let c = pattern.crash_time(p).unwrap();
            for t in c..=horizon {
                prop_assert_eq!(h.sigma(p, t), &all);
            }
        }
    }

    #[test]
    fn history_text_round_trips((blocks, pattern, t_gst, horizon) in case()) {
        let k = blocks.len();
        let h = gen_partition_history(&blocks, &pattern, t_gst, &leaders(&pattern, k), horizon).unwrap();
        prop_assert_eq!(FdHistory::parse(&h.to_text()).unwrap(), h);
    }
}
