//! Failure-detector histories over a finite horizon: checkers for Σ_k and
//! Ω_k and the generator for the partition detector `(Σ′_k, Ω′_k)`.
//!
//! Eventual properties are read as "holds from some time up to the
//! horizon".

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use thiserror::Error;

use crate::model::codec::{fmt_set, parse_set};
use crate::model::{FailurePattern, ProcessId, Time};
use crate::verdict::{Verdict, Witness};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DetectorError {
    #[error("horizon must be at least 1")]
    ZeroHorizon,
    #[error("invalid partition: {0}")]
    Partition(String),
    #[error("leader set has {got} members, expected {k}")]
    LeaderSize { got: usize, k: usize },
    #[error("leader set contains no correct process")]
    NoCorrectLeader,
    #[error("t_gst = {t_gst} lies beyond the horizon {horizon}")]
    LateStabilization { t_gst: Time, horizon: Time },
    #[error("{pid} crashes at {at}, after the horizon {horizon}")]
    LateCrash {
        pid: ProcessId,
        at: Time,
        horizon: Time,
    },
    #[error("history size mismatch: {0}")]
    Shape(String),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// `H(p, t)` for `p ∈ 1..=n` and `t ∈ 1..=horizon`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FdHistory {
    n: u32,
    horizon: Time,
    sigma: Vec<Vec<BTreeSet<ProcessId>>>,
    omega: Vec<Vec<BTreeSet<ProcessId>>>,
    pattern: FailurePattern,
}

impl FdHistory {
    /// `sigma[p-1][t-1]` and `omega[p-1][t-1]`; the pattern's processes must be `1..=n`.
    pub fn new(
        sigma: Vec<Vec<BTreeSet<ProcessId>>>,
        omega: Vec<Vec<BTreeSet<ProcessId>>>,
        pattern: FailurePattern,
    ) -> Result<Self, DetectorError> {
        let n = sigma.len() as u32;
        let horizon = sigma.first().map_or(0, Vec::len) as Time;
        if horizon == 0 {
            return Err(DetectorError::ZeroHorizon);
        }
        let expected: BTreeSet<ProcessId> = (1..=n).map(ProcessId).collect();
        if pattern.processes() != &expected || omega.len() != sigma.len() {
            return Err(DetectorError::Shape(format!("expected {n} processes")));
        }
        if sigma
            .iter()
            .chain(&omega)
            .any(|row| row.len() as Time != horizon)
        {
            return Err(DetectorError::Shape(format!(
                "every row needs {horizon} entries"
            )));
        }
        Ok(Self {
            n,
            horizon,
            sigma,
            omega,
            pattern,
        })
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn horizon(&self) -> Time {
        self.horizon
    }

    pub fn pattern(&self) -> &FailurePattern {
        &self.pattern
    }

    pub fn sigma(&self, p: ProcessId, t: Time) -> &BTreeSet<ProcessId> {
        &self.sigma[p.0 as usize - 1][t as usize - 1]
    }

    pub fn omega(&self, p: ProcessId, t: Time) -> &BTreeSet<ProcessId> {
        &self.omega[p.0 as usize - 1][t as usize - 1]
    }

    fn processes(&self) -> impl Iterator<Item = ProcessId> + Clone {
        (1..=self.n).map(ProcessId)
    }

    fn all(&self) -> BTreeSet<ProcessId> {
        self.processes().collect()
    }

    /// Header `fd-history n=<n> horizon=<h> crashes=<p>@<t>,…|-`, then one
    /// line `time \t p<i> \t sigma \t omega` per process and time.
    pub fn to_text(&self) -> String {
        let crashes: Vec<String> = self
            .processes()
            .filter_map(|p| self.pattern.crash_time(p).map(|t| format!("{}@{t}", p.0)))
            .collect();
        let crashes = if crashes.is_empty() {
            "-".into()
        } else {
            crashes.join(",")
        };
        let mut out = format!(
            "fd-history n={} horizon={} crashes={crashes}\n",
            self.n, self.horizon
        );
        for t in 1..=self.horizon {
            for p in self.processes() {
                let _ = writeln!(
                    out,
                    "{t}\t{p}\t{}\t{}",
                    fmt_set(self.sigma(p, t)),
                    fmt_set(self.omega(p, t))
                );
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, DetectorError> {
        let err = |line: usize, reason: String| DetectorError::Parse { line, reason };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (_, header) = lines.next().ok_or_else(|| err(1, "empty input".into()))?;
        let mut fields: BTreeMap<&str, &str> = BTreeMap::new();
        let mut words = header.split_whitespace();
        if words.next() != Some("fd-history") {
            return Err(err(1, "expected `fd-history` header".into()));
        }
        for w in words {
            let (k, v) = w
                .split_once('=')
                .ok_or_else(|| err(1, format!("bad field `{w}`")))?;
            fields.insert(k, v);
        }
        let num = |key: &str| -> Result<u64, DetectorError> {
            fields
                .get(key)
                .ok_or_else(|| err(1, format!("missing `{key}`")))?
                .parse()
                .map_err(|_| err(1, format!("bad `{key}`")))
        };
        let n = num("n")? as u32;
        let horizon = num("horizon")?;
        let mut crash_time = BTreeMap::new();
        match fields.get("crashes").copied() {
            Some("-") | None => {}
            Some(list) => {
                for item in list.split(',') {
                    let (p, t) = item
                        .split_once('@')
                        .ok_or_else(|| err(1, format!("bad crash `{item}`")))?;
                    let p: ProcessId = p
                        .parse()
                        .map_err(|_| err(1, format!("bad crash `{item}`")))?;
                    let t: Time = t
                        .parse()
                        .map_err(|_| err(1, format!("bad crash `{item}`")))?;
                    crash_time.insert(p, t);
                }
            }
        }
        let pattern = FailurePattern::new((1..=n).map(ProcessId).collect(), crash_time)
            .map_err(|e| err(1, e.to_string()))?;
        let empty = vec![vec![BTreeSet::new(); horizon as usize]; n as usize];
        let (mut sigma, mut omega) = (empty.clone(), empty);
        let mut seen = 0usize;
        for (no, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 4 {
                return Err(err(no, "expected 4 tab-separated fields".into()));
            }
            let t: Time = cols[0].parse().map_err(|_| err(no, "bad time".into()))?;
            let p: ProcessId = cols[1].parse().map_err(|_| err(no, "bad process".into()))?;
            if t == 0 || t > horizon || p.0 > n {
                return Err(err(no, "entry outside the history".into()));
            }
            let (pi, ti) = (p.0 as usize - 1, t as usize - 1);
            sigma[pi][ti] = parse_set(cols[2]).map_err(|r| err(no, r))?;
            omega[pi][ti] = parse_set(cols[3]).map_err(|r| err(no, r))?;
            seen += 1;
        }
        if seen != n as usize * horizon as usize {
            return Err(err(
                1,
                format!("expected {} entries, found {seen}", n as u64 * horizon),
            ));
        }
        Self::new(sigma, omega, pattern)
    }
}

/// Σ_k: crash absorption, intersection among any `k + 1` processes at any
/// times, and liveness at the horizon for correct processes.
pub fn check_sigma_k(h: &FdHistory, k: u32) -> Verdict {
    const CHECK: &str = "sigma-k";
    let all = h.all();
    for p in h.processes() {
        if let Some(c) = h.pattern.crash_time(p) {
            if let Some(t) = (c..=h.horizon).find(|&t| h.sigma(p, t) != &all) {
                return Verdict::fail(
                    CHECK,
                    Witness {
                        processes: vec![p],
                        steps: vec![t],
                        detail: format!("crashed at {c} but does not output every process"),
                        ..Witness::default()
                    },
                );
            }
        }
    }

    if let Some(found) = disjoint_outputs(h, k as usize + 1) {
        return Verdict::fail(
            CHECK,
            Witness {
                processes: found.iter().map(|&(p, _)| p).collect(),
                steps: found.iter().map(|&(_, t)| t).collect(),
                detail: format!("{} pairwise disjoint outputs", found.len()),
                ..Witness::default()
            },
        );
    }

    let faulty = h.pattern.faulty();
    for p in h.pattern.correct() {
        let out = h.sigma(p, h.horizon);
        if !out.is_disjoint(&faulty) {
            return Verdict::fail(
                CHECK,
                Witness {
                    processes: vec![p],
                    steps: vec![h.horizon],
                    detail: "correct process still trusts a faulty one at the horizon".into(),
                    ..Witness::default()
                },
            );
        }
    }
    Verdict::pass(CHECK)
}

/// Searches for `m` distinct processes with pairwise disjoint outputs at some
/// times, returning one such choice of `(process, time)`.
fn disjoint_outputs(h: &FdHistory, m: usize) -> Option<Vec<(ProcessId, Time)>> {
    // Distinct outputs of each process with the first time each occurs.
    let options: Vec<Vec<(&BTreeSet<ProcessId>, Time)>> = h
        .processes()
        .map(|p| {
            let mut seen: Vec<(&BTreeSet<ProcessId>, Time)> = Vec::new();
            for t in 1..=h.horizon {
                let out = h.sigma(p, t);
                if !seen.iter().any(|(s, _)| *s == out) {
                    seen.push((out, t));
                }
            }
            seen
        })
        .collect();

    fn search<'h>(
        options: &[Vec<(&'h BTreeSet<ProcessId>, Time)>],
        from: usize,
        m: usize,
        chosen: &mut Vec<(usize, &'h BTreeSet<ProcessId>, Time)>,
    ) -> bool {
        if chosen.len() == m {
            return true;
        }
        if options.len() - from < m - chosen.len() {
            return false;
        }
        for pi in from..options.len() {
            for &(out, t) in &options[pi] {
                if chosen.iter().all(|(_, o, _)| o.is_disjoint(out)) {
                    chosen.push((pi, out, t));
                    if search(options, pi + 1, m, chosen) {
                        return true;
                    }
                    chosen.pop();
                }
            }
        }
        false
    }

    let mut chosen = Vec::new();
    search(&options, 0, m, &mut chosen).then(|| {
        chosen
            .into_iter()
            .map(|(pi, _, t)| (ProcessId(pi as u32 + 1), t))
            .collect()
    })
}

/// Earliest `t` from which every process outputs the same leader set up to
/// the horizon, with that set.
pub fn omega_stabilization(h: &FdHistory) -> (Time, BTreeSet<ProcessId>) {
    let ld = h.omega(ProcessId(1), h.horizon).clone();
    let uniform = |t: Time| h.processes().all(|p| h.omega(p, t) == &ld);
    let mut t_gst = h.horizon + 1;
    while t_gst > 1 && uniform(t_gst - 1) {
        t_gst -= 1;
    }
    (t_gst, ld)
}

/// Ω_k: every output has `k` members, and from some time on all processes
/// output the same set, which contains a correct process.
pub fn check_omega_k(h: &FdHistory, k: u32) -> Verdict {
    const CHECK: &str = "omega-k";
    for t in 1..=h.horizon {
        for p in h.processes() {
            if h.omega(p, t).len() != k as usize {
                return Verdict::fail(
                    CHECK,
                    Witness {
                        processes: vec![p],
                        steps: vec![t],
                        detail: format!("output has {} members, expected {k}", h.omega(p, t).len()),
                        ..Witness::default()
                    },
                );
            }
        }
    }
    let (t_gst, ld) = omega_stabilization(h);
    if t_gst > h.horizon {
        return Verdict::fail(
            CHECK,
            Witness {
                steps: vec![h.horizon],
                detail: "outputs disagree at the horizon".into(),
                ..Witness::default()
            },
        );
    }
    if ld.is_disjoint(&h.pattern.correct()) {
        return Verdict::fail(
            CHECK,
            Witness {
                processes: ld.into_iter().collect(),
                steps: vec![t_gst],
                detail: "stable leader set contains only faulty processes".into(),
                ..Witness::default()
            },
        );
    }
    Verdict::pass(CHECK)
}

/// A history of the partition detector for `partition` (one block per unit
/// of `k`).
///
/// Σ part: a live member outputs the members of its block not crashed at
/// the query time; a crashed process outputs every process. Ω part: before
/// `t_gst` process `p` at time `t` outputs the `k` processes following
/// position `p + t` cyclically, from `t_gst` on everyone outputs `ld`.
pub fn gen_partition_history(
    partition: &[BTreeSet<ProcessId>],
    pattern: &FailurePattern,
    t_gst: Time,
    ld: &BTreeSet<ProcessId>,
    horizon: Time,
) -> Result<FdHistory, DetectorError> {
    if horizon == 0 {
        return Err(DetectorError::ZeroHorizon);
    }
    let all = pattern.processes().clone();
    let n = all.len() as u32;
    if all != (1..=n).map(ProcessId).collect() {
        return Err(DetectorError::Partition("processes must be 1..=n".into()));
    }
    let mut block_of: BTreeMap<ProcessId, usize> = BTreeMap::new();
    for (i, block) in partition.iter().enumerate() {
        if block.is_empty() {
            return Err(DetectorError::Partition(format!("block {i} is empty")));
        }
        for &p in block {
            if !all.contains(&p) {
                return Err(DetectorError::Partition(format!("{p} is not a process")));
            }
            if block_of.insert(p, i).is_some() {
                return Err(DetectorError::Partition(format!("{p} is in two blocks")));
            }
        }
    }
    if block_of.len() != all.len() {
        return Err(DetectorError::Partition(
            "blocks do not cover every process".into(),
        ));
    }
    let k = partition.len();
    if ld.len() != k {
        return Err(DetectorError::LeaderSize { got: ld.len(), k });
    }
    if ld.is_disjoint(&pattern.correct()) {
        return Err(DetectorError::NoCorrectLeader);
    }
    if t_gst > horizon {
        return Err(DetectorError::LateStabilization { t_gst, horizon });
    }
    if let Some(p) = all
        .iter()
        .find(|&&p| pattern.crash_time(p).is_some_and(|c| c > horizon))
    {
        return Err(DetectorError::LateCrash {
            pid: *p,
            at: pattern.crash_time(*p).expect("checked"),
            horizon,
        });
    }

    let order: Vec<ProcessId> = all.iter().copied().collect();
    let mut sigma = Vec::with_capacity(n as usize);
    let mut omega = Vec::with_capacity(n as usize);
    for &p in &order {
        let block = &partition[block_of[&p]];
        let mut srow = Vec::with_capacity(horizon as usize);
        let mut orow = Vec::with_capacity(horizon as usize);
        for t in 1..=horizon {
            if pattern.is_crashed(p, t) {
                srow.push(all.clone());
            } else {
                srow.push(
                    block
                        .iter()
                        .copied()
                        .filter(|&q| !pattern.is_crashed(q, t))
                        .collect(),
                );
            }
            if t >= t_gst {
                orow.push(ld.clone());
            } else {
                let start = (p.0 as usize + t as usize) % order.len();
                orow.push((0..k).map(|i| order[(start + i) % order.len()]).collect());
            }
        }
        sigma.push(srow);
        omega.push(orow);
    }
    FdHistory::new(sigma, omega, pattern.clone())
}
