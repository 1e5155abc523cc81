//! Line-oriented trace files.
//!
//! ```text
//! kset-trace v1 alg=two-stage n=3 f=1 k=1 seed=7 members={1,2,3} inputs=1:10,2:20,3:30 dead={3} crashes=- status=complete@9
//! 1	p1	-	-	1>p2:S1 2>p3:S1	-
//! 2	p2	1	-	3>p1:S1 4>p3:S1 5>p1:S2(20;{1}) 6>p3:S2(20;{1})	-
//! ```
//!
//! Step lines carry tab-separated fields in fixed order: time, actor,
//! delivered message ids, detector output, sent messages, decision.

#![allow(clippy::tabs_in_doc_comments)]

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use thiserror::Error;

use super::{
    CrashPlan, FdOutput, Message, MessageId, MidRunCrash, Payload, ProcessId, StepRecord,
    SystemParams, Time, Trace, TraceStatus, Value,
};

const MAGIC: &str = "kset-trace v1";

#[derive(Debug, Error, PartialEq, Eq)]
#[error("line {line}: {reason}")]
pub struct CodecError {
    pub line: usize,
    pub reason: String,
}

fn err(line: usize, reason: impl Into<String>) -> CodecError {
    CodecError {
        line,
        reason: reason.into(),
    }
}

pub(crate) fn fmt_set(set: &BTreeSet<ProcessId>) -> String {
    let inner: Vec<String> = set.iter().map(|p| p.0.to_string()).collect();
    format!("{{{}}}", inner.join(","))
}

pub(crate) fn parse_set(s: &str) -> Result<BTreeSet<ProcessId>, String> {
    let inner = s
        .strip_prefix('{')
        .and_then(|r| r.strip_suffix('}'))
        .ok_or_else(|| format!("expected a set in braces, got `{s}`"))?;
    if inner.is_empty() {
        return Ok(BTreeSet::new());
    }
    inner.split(',').map(|p| p.parse::<ProcessId>()).collect()
}

fn fmt_payload(payload: &Payload) -> String {
    match payload {
        Payload::Stage1 => "S1".to_string(),
        Payload::Stage2 { proposal, heard } => format!("S2({proposal};{})", fmt_set(heard)),
        Payload::Opaque(bytes) => {
            let mut hex = String::with_capacity(bytes.len() * 2);
            for b in bytes {
                let _ = write!(hex, "{b:02x}");
            }
            format!("X({hex})")
        }
    }
}

fn parse_payload(s: &str) -> Result<Payload, String> {
    if s == "S1" {
        return Ok(Payload::Stage1);
    }
    if let Some(body) = s.strip_prefix("S2(").and_then(|r| r.strip_suffix(')')) {
        let (v, heard) = body
            .split_once(';')
            .ok_or_else(|| format!("bad stage-2 payload `{s}`"))?;
        let proposal = Value(v.parse().map_err(|_| format!("bad value `{v}`"))?);
        return Ok(Payload::Stage2 {
            proposal,
            heard: parse_set(heard)?,
        });
    }
    if let Some(hex) = s.strip_prefix("X(").and_then(|r| r.strip_suffix(')')) {
        if hex.len() % 2 != 0 {
            return Err(format!("odd-length hex payload `{s}`"));
        }
        let bytes = (0..hex.len())
            .step_by(2)
            .map(|i| u8::from_str_radix(&hex[i..i + 2], 16))
            .collect::<Result<Vec<u8>, _>>()
            .map_err(|_| format!("bad hex payload `{s}`"))?;
        return Ok(Payload::Opaque(bytes));
    }
    Err(format!("unknown payload `{s}`"))
}

fn fmt_crashes(plan: &CrashPlan) -> String {
    if plan.mid_run.is_empty() {
        return "-".into();
    }
    plan.mid_run
        .iter()
        .map(|c| format!("{}@{}/{}", c.pid.0, c.after_step, fmt_set(&c.omit)))
        .collect::<Vec<_>>()
        .join(",")
}

fn parse_crashes(s: &str) -> Result<Vec<MidRunCrash>, String> {
    if s == "-" {
        return Ok(Vec::new());
    }
    // Split on commas that are outside braces.
    let mut out = Vec::new();
    let mut depth = 0;
    let mut start = 0;
    let bytes = s.as_bytes();
    for i in 0..=bytes.len() {
        let at_end = i == bytes.len();
        if !at_end {
            match bytes[i] {
                b'{' => depth += 1,
                b'}' => depth -= 1,
                _ => {}
            }
        }
        if at_end || (bytes[i] == b',' && depth == 0) {
            let item = &s[start..i];
            start = i + 1;
            let (pid, rest) = item
                .split_once('@')
                .ok_or_else(|| format!("bad crash `{item}`"))?;
            let (after, omit) = rest
                .split_once('/')
                .ok_or_else(|| format!("bad crash `{item}`"))?;
            out.push(MidRunCrash {
                pid: pid.parse()?,
                after_step: after
                    .parse()
                    .map_err(|_| format!("bad crash step `{after}`"))?,
                omit: parse_set(omit)?,
            });
        }
    }
    Ok(out)
}

fn fmt_fd(fd: &Option<FdOutput>) -> String {
    match fd {
        None => "-".into(),
        Some(o) => format!("S{}O{}", fmt_set(&o.sigma), fmt_set(&o.omega)),
    }
}

fn parse_fd(s: &str) -> Result<Option<FdOutput>, String> {
    if s == "-" {
        return Ok(None);
    }
    let body = s
        .strip_prefix('S')
        .ok_or_else(|| format!("bad detector output `{s}`"))?;
    let split = body
        .find("}O")
        .ok_or_else(|| format!("bad detector output `{s}`"))?;
    Ok(Some(FdOutput {
        sigma: parse_set(&body[..=split])?,
        omega: parse_set(&body[split + 2..])?,
    }))
}

/// Serializes a trace. Identical traces give byte-identical text.
pub fn write_trace(trace: &Trace) -> String {
    let mut out = String::new();
    let inputs: Vec<String> = trace
        .inputs
        .iter()
        .map(|(p, v)| format!("{}:{}", p.0, v))
        .collect();
    let status = match trace.status {
        TraceStatus::Complete { quiescent_from } => format!("complete@{quiescent_from}"),
        TraceStatus::Truncated => "truncated".to_string(),
    };
    let _ =
        writeln!(
        out,
        "{MAGIC} alg={} n={} f={} k={} seed={} members={} inputs={} dead={} crashes={} status={}",
        trace.algorithm,
        trace.params.n(),
        trace.params.f(),
        trace.params.k(),
        trace.seed,
        fmt_set(&trace.members),
        if inputs.is_empty() { "-".to_string() } else { inputs.join(",") },
        fmt_set(&trace.crash_plan.initially_dead),
        fmt_crashes(&trace.crash_plan),
        status,
    );
    for step in &trace.steps {
        let delivered = if step.delivered.is_empty() {
            "-".to_string()
        } else {
            step.delivered
                .iter()
                .map(|id| id.0.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        let sent = if step.sent.is_empty() {
            "-".to_string()
        } else {
            step.sent
                .iter()
                .map(|m| format!("{}>{}:{}", m.id, m.receiver, fmt_payload(&m.payload)))
                .collect::<Vec<_>>()
                .join(" ")
        };
        let decided = step
            .decided
            .map_or_else(|| "-".to_string(), |v| v.to_string());
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            step.time,
            step.actor,
            delivered,
            fmt_fd(&step.fd),
            sent,
            decided
        );
    }
    out
}

/// Parses a trace written by [`write_trace`]. Errors carry 1-based line
/// numbers.
pub fn parse_trace(text: &str) -> Result<Trace, CodecError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines.next().ok_or_else(|| err(1, "empty trace file"))?;
    let rest = header
        .strip_prefix(MAGIC)
        .ok_or_else(|| err(1, format!("missing `{MAGIC}` header")))?;
    let mut fields: BTreeMap<&str, &str> = BTreeMap::new();
    for token in rest.split_whitespace() {
        let (k, v) = token
            .split_once('=')
            .ok_or_else(|| err(1, format!("bad header token `{token}`")))?;
        fields.insert(k, v);
    }
    let get = |k: &str| {
        fields
            .get(k)
            .copied()
            .ok_or_else(|| err(1, format!("missing header field `{k}`")))
    };
    let num = |k: &str| -> Result<u64, CodecError> {
        get(k)?
            .parse()
            .map_err(|_| err(1, format!("header field `{k}` is not a number")))
    };
    let params = SystemParams::new(num("n")? as u32, num("f")? as u32, num("k")? as u32)
        .map_err(|e| err(1, e.to_string()))?;
    let members = parse_set(get("members")?).map_err(|e| err(1, e))?;
    let mut inputs = BTreeMap::new();
    let raw_inputs = get("inputs")?;
    if raw_inputs != "-" {
        for item in raw_inputs.split(',') {
            let (p, v) = item
                .split_once(':')
                .ok_or_else(|| err(1, format!("bad input `{item}`")))?;
            let p: ProcessId = p.parse().map_err(|e: String| err(1, e))?;
            let v: i64 = v
                .parse()
                .map_err(|_| err(1, format!("bad input value `{v}`")))?;
            inputs.insert(p, Value(v));
        }
    }
    let crash_plan = CrashPlan {
        initially_dead: parse_set(get("dead")?).map_err(|e| err(1, e))?,
        mid_run: parse_crashes(get("crashes")?).map_err(|e| err(1, e))?,
    };
    let status = match get("status")? {
        "truncated" => TraceStatus::Truncated,
        s => {
            let q = s
                .strip_prefix("complete@")
                .and_then(|q| q.parse::<Time>().ok())
                .ok_or_else(|| err(1, format!("bad status `{s}`")))?;
            TraceStatus::Complete { quiescent_from: q }
        }
    };

    let mut steps = Vec::new();
    for (ln, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 6 {
            return Err(err(
                ln,
                format!("expected 6 tab-separated fields, got {}", cols.len()),
            ));
        }
        let time: Time = cols[0].parse().map_err(|_| err(ln, "bad time"))?;
        let actor: ProcessId = cols[1].parse().map_err(|e: String| err(ln, e))?;
        let delivered = if cols[2] == "-" {
            Vec::new()
        } else {
            cols[2]
                .split(',')
                .map(|id| {
                    id.parse()
                        .map(MessageId)
                        .map_err(|_| err(ln, format!("bad message id `{id}`")))
                })
                .collect::<Result<_, _>>()?
        };
        let fd = parse_fd(cols[3]).map_err(|e| err(ln, e))?;
        let mut sent = Vec::new();
        if cols[4] != "-" {
            for item in cols[4].split(' ') {
                let (id, rest) = item
                    .split_once('>')
                    .ok_or_else(|| err(ln, format!("bad message `{item}`")))?;
                let (to, payload) = rest
                    .split_once(':')
                    .ok_or_else(|| err(ln, format!("bad message `{item}`")))?;
                sent.push(Message {
                    id: MessageId(
                        id.parse()
                            .map_err(|_| err(ln, format!("bad message id `{id}`")))?,
                    ),
                    sender: actor,
                    receiver: to.parse().map_err(|e: String| err(ln, e))?,
                    payload: parse_payload(payload).map_err(|e| err(ln, e))?,
                    sent_at: time,
                });
            }
        }
        let decided = if cols[5] == "-" {
            None
        } else {
            Some(Value(cols[5].parse().map_err(|_| err(ln, "bad decision"))?))
        };
        steps.push(StepRecord {
            time,
            actor,
            delivered,
            fd,
            sent,
            decided,
        });
    }

    Ok(Trace {
        params,
        members,
        inputs,
        crash_plan,
        seed: num("seed")?,
        algorithm: get("alg")?.to_string(),
        steps,
        status,
    })
}
