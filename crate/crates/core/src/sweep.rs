//! Grid sweeps over `(n, f, k)`: seeded Fair / InitialCrash runs of the
//! two-stage protocol plus the partitioning run for every unsolvable tuple.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::seq::IteratorRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::analysis::{check_all, is_border, partition_scenario, solvable};
use crate::model::{CrashPlan, ProcessId, SystemParams, Trace};
use crate::par::{par_map, Execution};
use crate::protocol::TwoStage;
use crate::sim::{run_simulation, AdversaryKind, Scenario, SimError};

/// Initial-crash set for seed `seed` of a tuple. When there are at most
/// `seeds` subsets of size `<= f`, seed `i` takes the `i`-th in a fixed
/// enumeration so that all of them are covered; otherwise the subset is
/// drawn from a seeded generator.
pub fn initial_crashes(params: SystemParams, seed: u64, seeds: u64) -> BTreeSet<ProcessId> {
    let (n, f) = (params.n(), params.f());
    let subsets = small_subsets(n, f);
    if let Some(list) = subsets.filter(|l| l.len() as u64 <= seeds) {
        return list[(seed % list.len() as u64) as usize].clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0fc4_a5a5);
    let size = rng.random_range(0..=f) as usize;
    params
        .processes()
        .choose_multiple(&mut rng, size)
        .into_iter()
        .collect()
}

/// All subsets of `1..=n` with at most `f` members, ordered by size then
/// lexicographically, if there are at most 4096 of them.
fn small_subsets(n: u32, f: u32) -> Option<Vec<BTreeSet<ProcessId>>> {
    if n > 12 {
        return None;
    }
    let mut masks: Vec<u32> = (0u32..1 << n).filter(|m| m.count_ones() <= f).collect();
    if masks.len() > 4096 {
        return None;
    }
    masks.sort_by_key(|m| (m.count_ones(), m.reverse_bits()));
    Some(
        masks
            .into_iter()
            .map(|m| {
                (0..n)
                    .filter(|i| m >> i & 1 == 1)
                    .map(|i| ProcessId(i + 1))
                    .collect()
            })
            .collect(),
    )
}

/// Fair adversary with the crash set of [`initial_crashes`] and inputs
/// `x_p = p`.
pub fn fair_scenario(params: SystemParams, seed: u64, seeds: u64) -> Scenario {
    Scenario::new(params)
        .with_seed(seed)
        .with_crash_plan(CrashPlan::initially_dead(initial_crashes(
            params, seed, seeds,
        )))
}

/// Even seeds use [`fair_scenario`], odd seeds the InitialCrash adversary,
/// which kills as many processes as `f` allows.
pub fn sweep_scenario(params: SystemParams, seed: u64, seeds: u64) -> Scenario {
    if seed.is_multiple_of(2) {
        fair_scenario(params, seed, seeds)
    } else {
        Scenario::new(params)
            .with_seed(seed)
            .with_adversary(AdversaryKind::InitialCrash)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SweepRow {
    pub n: u32,
    pub f: u32,
    pub k: u32,
    pub predicted_solvable: bool,
    /// Runs in which agreement, validity or termination failed.
    pub violations: u32,
    pub seeds_run: u32,
    pub worst_distinct: usize,
    /// Runs that hit the step budget; these count neither as passes nor as
    /// violations.
    pub truncated: u32,
    /// Whether the partitioning run was part of this row.
    pub partition_run: bool,
}

impl SweepRow {
    /// Solvable rows must be clean. Unsolvable rows must show a violation,
    /// and on the border `kn = (k+1)f` exactly `k + 1` distinct decisions.
    pub fn matches_prediction(&self) -> bool {
        if self.predicted_solvable {
            self.violations == 0 && self.truncated == 0
        } else if is_border(self.n, self.f, self.k) {
            self.violations > 0 && self.worst_distinct == self.k as usize + 1
        } else {
            self.violations > 0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    /// Set when the run budget cut the grid short.
    pub partial: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SweepConfig {
    pub n_max: u32,
    pub seeds: u64,
    /// Upper bound on the number of simulations; rows beyond it are skipped.
    pub max_runs: Option<u64>,
    pub execution: Execution,
}

impl SweepConfig {
    pub fn new(n_max: u32, seeds: u64) -> Self {
        Self {
            n_max,
            seeds,
            max_runs: None,
            execution: Execution::default(),
        }
    }
}

/// Every valid `(n, f, k)` with `n <= n_max`, sorted.
pub fn grid(n_max: u32) -> Vec<SystemParams> {
    let mut out = Vec::new();
    for n in 1..=n_max {
        for f in 0..n {
            for k in 1..=n.saturating_sub(1).max(1) {
                if let Ok(p) = SystemParams::new(n, f, k) {
                    out.push(p);
                }
            }
        }
    }
    out
}

fn tally(row: &mut SweepRow, trace: &Trace, k: u32) {
    if !trace.is_complete() {
        row.truncated += 1;
    }
    let verdicts = check_all(trace, k);
    if verdicts.iter().any(|v| v.failed()) {
        row.violations += 1;
    }
    row.worst_distinct = row.worst_distinct.max(trace.distinct_decisions().len());
}

pub fn sweep_row(params: SystemParams, seeds: u64) -> Result<SweepRow, SimError> {
    let (n, f, k) = (params.n(), params.f(), params.k());
    let alg = TwoStage::default();
    let mut row = SweepRow {
        n,
        f,
        k,
        predicted_solvable: solvable(n, f, k),
        violations: 0,
        seeds_run: 0,
        worst_distinct: 0,
        truncated: 0,
        partition_run: false,
    };
    for seed in 0..seeds {
        let trace = run_simulation(&alg, &sweep_scenario(params, seed, seeds))?;
        tally(&mut row, &trace, k);
        row.seeds_run += 1;
    }
    if !row.predicted_solvable {
        let scenario = partition_scenario(params).expect("tuple is unsolvable");
        let trace = run_simulation(&alg, &scenario)?;
        tally(&mut row, &trace, k);
        row.partition_run = true;
    }
    Ok(row)
}

pub fn run_sweep(config: &SweepConfig) -> Result<SweepReport, SimError> {
    let mut tuples = grid(config.n_max);
    let mut partial = false;
    if let Some(max) = config.max_runs {
        let mut used = 0u64;
        let keep = tuples
            .iter()
            .take_while(|p| {
                used += config.seeds + u64::from(!solvable(p.n(), p.f(), p.k()));
                used <= max
            })
            .count();
        partial = keep < tuples.len();
        tuples.truncate(keep);
    }
    let rows = par_map(tuples, config.execution, |p| sweep_row(p, config.seeds))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SweepReport { rows, partial })
}

impl SweepReport {
    pub fn all_match(&self) -> bool {
        self.rows.iter().all(SweepRow::matches_prediction)
    }

    /// Aligned plain-text table.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:>3} {:>3} {:>3}  {:<9} {:>10} {:>5} {:>6} {:>9}  match",
            "n", "f", "k", "solvable", "violations", "runs", "worst", "truncated"
        );
        for r in &self.rows {
            let runs = r.seeds_run + u32::from(r.partition_run);
            let _ = writeln!(
                out,
                "{:>3} {:>3} {:>3}  {:<9} {:>10} {:>5} {:>6} {:>9}  {}",
                r.n,
                r.f,
                r.k,
                r.predicted_solvable,
                r.violations,
                runs,
                r.worst_distinct,
                r.truncated,
                if r.matches_prediction() { "yes" } else { "NO" }
            );
        }
        if self.partial {
            out.push_str("partial: run budget exhausted before the grid was covered\n");
        }
        out
    }

    /// One `key=value` record per row after a header record.
    pub fn to_records(&self) -> String {
        let mut out = format!(
            "sweep-report rows={} partial={}\n",
            self.rows.len(),
            self.partial
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "n={} f={} k={} predicted_solvable={} violations={} seeds_run={} worst_distinct={} truncated={} partition_run={} matches={}",
                r.n,
                r.f,
                r.k,
                r.predicted_solvable,
                r.violations,
                r.seeds_run,
                r.worst_distinct,
                r.truncated,
                r.partition_run,
                r.matches_prediction()
            );
        }
        out
    }
}

/// `(n, f, k, solvable, impossibility bound)` for every tuple of the grid.
pub fn solvability_table(n_max: u32) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:>3} {:>3} {:>3}  {:<8} {:>5}",
        "n", "f", "k", "solvable", "bound"
    );
    for p in grid(n_max) {
        let _ = writeln!(
            out,
            "{:>3} {:>3} {:>3}  {:<8} {:>5}",
            p.n(),
            p.f(),
            p.k(),
            solvable(p.n(), p.f(), p.k()),
            crate::analysis::impossibility_bound(p.n(), p.f())
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_is_sorted_and_complete() {
        let g = grid(4);
        let triples: Vec<(u32, u32, u32)> = g.iter().map(|p| (p.n(), p.f(), p.k())).collect();
        let mut sorted = triples.clone();
        sorted.sort();
        assert_eq!(triples, sorted);
        assert_eq!(triples[0], (1, 0, 1));
        // n = 2: f in {0,1}, k = 1; n = 3: 3 * 2; n = 4: 4 * 3.
        assert_eq!(triples.len(), 1 + 2 + 6 + 12);
    }

    #[test]
    fn small_grids_enumerate_every_crash_subset() {
        let params = SystemParams::new(4, 2, 1).unwrap();
        let sets: BTreeSet<BTreeSet<ProcessId>> =
            (0..11).map(|s| initial_crashes(params, s, 11)).collect();
        assert_eq!(sets.len(), 11);
        assert!(sets.iter().all(|s| s.len() <= 2));
    }

    #[test]
    fn border_row_reports_the_violation() {
        let row = sweep_row(SystemParams::new(4, 2, 1).unwrap(), 10).unwrap();
        assert!(!row.predicted_solvable);
        assert!(row.violations >= 1);
        assert_eq!(row.worst_distinct, 2);
        assert!(row.matches_prediction());
    }

    #[test]
    fn solvable_row_is_clean() {
        let row = sweep_row(SystemParams::new(3, 1, 1).unwrap(), 10).unwrap();
        assert!(row.predicted_solvable);
        assert_eq!(row.violations, 0);
        assert_eq!(row.seeds_run, 10);
    }

    #[test]
    fn budget_flags_partial_reports() {
        let mut config = SweepConfig::new(4, 2);
        config.max_runs = Some(5);
        let report = run_sweep(&config).unwrap();
        assert!(report.partial);
        assert!(report.rows.len() < grid(4).len());
        assert!(report.to_table().contains("partial"));
    }

    #[test]
    fn sequential_and_parallel_reports_match() {
        let mut config = SweepConfig::new(4, 3);
        let par = run_sweep(&config).unwrap();
        config.execution = Execution::Sequential;
        assert_eq!(par, run_sweep(&config).unwrap());
        assert!(par.all_match());
    }
}
