//! Structured trace records and their line format.
//!
//! Every record prints as `cycle=N pe=N tid=N ev=KIND k=v...`.

use std::fmt;

use crate::bus::MessageKind;
use crate::isa::{Label, RegisterId};
use crate::memcache::{Addr, MemLineState, Version};
use crate::regcache::RegState;
use crate::thread::{LifecycleEvent, ThreadId, ThreadState};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TraceEvent {
    Start { pc: usize },
    State { from: ThreadState, to: ThreadState, cause: LifecycleEvent },
    Spawn { label: Label, child: ThreadId, child_pe: usize, child_version: Version, parent_version: Version },
    SpawnRefused { label: Label },
    /// A cache-local message (LPrR, LPrW, LSpR, LSpW).
    Local { kind: MessageKind, addr: Addr, ver: Version, state: MemLineState, value: i64 },
    /// RPrR or RSpR; `responder` is `None` when memory answered.
    Remote { kind: MessageKind, level: usize, addr: Addr, ver: Option<Version>, responder: Option<ThreadId>, value: i64 },
    VioTest { level: usize, addr: Addr },
    Violation { addr: Addr, victim: ThreadId, squashed: Vec<ThreadId> },
    Restart { pc: usize, version: Version },
    Squash { squashed: Vec<ThreadId> },
    Stall { child: ThreadId },
    Verify { child: ThreadId, passed: bool, mem_compared: usize, regs_compared: usize, mismatches: usize },
    Commit { seq: u64, level: usize, words: usize },
    Token { to: ThreadId },
    Reg { reg: RegisterId, from: RegState, to: RegState, value: i64 },
    /// A speculative thread stopped at an instruction it could not execute.
    Fault { pc: usize },
    Halt,
}

impl TraceEvent {
    pub fn kind(&self) -> &'static str {
        match self {
            TraceEvent::Start { .. } => "START",
            TraceEvent::State { .. } => "STATE",
            TraceEvent::Spawn { .. } => "SPAWN",
            TraceEvent::SpawnRefused { .. } => "REFUSE",
            TraceEvent::Local { kind, .. } | TraceEvent::Remote { kind, .. } => match kind {
                MessageKind::LPrR => "LPrR",
                MessageKind::RPrR => "RPrR",
                MessageKind::LPrW => "LPrW",
                MessageKind::LSpR => "LSpR",
                MessageKind::LSpW => "LSpW",
                MessageKind::RSpR => "RSpR",
                MessageKind::VioTest => "VioTest",
            },
            TraceEvent::VioTest { .. } => "VioTest",
            TraceEvent::Violation { .. } => "VIOLATION",
            TraceEvent::Restart { .. } => "RESTART",
            TraceEvent::Squash { .. } => "SQUASH",
            TraceEvent::Stall { .. } => "STALL",
            TraceEvent::Verify { .. } => "VERIFY",
            TraceEvent::Commit { .. } => "COMMIT",
            TraceEvent::Token { .. } => "TOKEN",
            TraceEvent::Reg { .. } => "REG",
            TraceEvent::Fault { .. } => "FAULT",
            TraceEvent::Halt => "HALT",
        }
    }
}

fn tid_list(ts: &[ThreadId]) -> String {
    if ts.is_empty() {
        return "-".to_string();
    }
    ts.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(",")
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ev={}", self.kind())?;
        match self {
            TraceEvent::Start { pc } | TraceEvent::Fault { pc } => write!(f, " pc={pc}"),
            TraceEvent::State { from, to, cause } => write!(f, " from={from} to={to} cause={cause}"),
            TraceEvent::Spawn { label, child, child_pe, child_version, parent_version } => write!(
                f,
                " label={label} child={child} child_pe={child_pe} child_ver={child_version} parent_ver={parent_version}"
            ),
            TraceEvent::SpawnRefused { label } => write!(f, " label={label}"),
            TraceEvent::Local { addr, ver, state, value, .. } => {
                write!(f, " addr={addr} ver={ver} state={state} value={value}")
            }
            TraceEvent::Remote { level, addr, ver, responder, value, .. } => {
                write!(f, " level={level} addr={addr}")?;
                if let Some(v) = ver {
                    write!(f, " ver={v}")?;
                }
                match responder {
                    Some(t) => write!(f, " from={t}")?,
                    None => f.write_str(" from=mem")?,
                }
                write!(f, " value={value}")
            }
            TraceEvent::VioTest { level, addr } => write!(f, " level={level} addr={addr}"),
            TraceEvent::Violation { addr, victim, squashed } => {
                write!(f, " addr={addr} victim={victim} squashed={}", tid_list(squashed))
            }
            TraceEvent::Restart { pc, version } => write!(f, " pc={pc} ver={version}"),
            TraceEvent::Squash { squashed } => write!(f, " squashed={}", tid_list(squashed)),
            TraceEvent::Stall { child } => write!(f, " child={child}"),
            TraceEvent::Verify { child, passed, mem_compared, regs_compared, mismatches } => write!(
                f,
                " child={child} passed={passed} mem={mem_compared} regs={regs_compared} mismatches={mismatches}"
            ),
            TraceEvent::Commit { seq, level, words } => write!(f, " seq={seq} level={level} words={words}"),
            TraceEvent::Token { to } => write!(f, " to={to}"),
            TraceEvent::Reg { reg, from, to, value } => write!(f, " reg={reg} from={from} to={to} value={value}"),
            TraceEvent::Halt => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRecord {
    pub cycle: u64,
    pub pe: usize,
    pub tid: ThreadId,
    pub event: TraceEvent,
}

impl fmt::Display for TraceRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "cycle={} pe={} tid={} {}", self.cycle, self.pe, self.tid, self.event)
    }
}
